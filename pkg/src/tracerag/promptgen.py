"""Log context extraction and prompt rendering."""
from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from typing import Dict, List, Optional, Sequence, Tuple

from .core import DeviationPattern, EventLog, PatternKind, Trace, format_pattern, quote_label
from .embed import trace_to_sentence

PLACEHOLDERS = ("activity_sequence", "frequent_traces", "frequent_activities", "examples")


class TemplateError(ValueError):
    pass


@dataclass(frozen=True)
class LogContext:
    frequent_traces: Tuple[Tuple[Tuple[str, ...], int], ...] = ()
    frequent_activities: Tuple[Tuple[str, Fraction], ...] = ()
    n_traces: int = 3
    activity_threshold: float = 0.10

    @property
    def references(self) -> List[Tuple[str, ...]]:
        return [seq for seq, _ in self.frequent_traces]

    def is_empty(self) -> bool:
        return not self.frequent_traces and not self.frequent_activities


def _as_fraction(x) -> Fraction:
    return Fraction(x).limit_denominator(10 ** 9) if isinstance(x, float) else Fraction(x)


def extract_log_context(log: EventLog, n_traces: int = 3, threshold: float = 0.10) -> LogContext:
    """Most frequent variants and activities contained in enough traces.

    Variants are ranked by count, ties by first occurrence. Activity
    support is the share of traces containing the activity; the cut-off
    is inclusive. Activities are ranked by support, then label.
    """
    if len(log) == 0:
        raise ValueError("log context needs a non-empty log")
    if n_traces < 0:
        raise ValueError("n_traces must be non-negative")
    variants = Counter(t.activities for t in log.traces)
    first = {}
    for i, t in enumerate(log.traces):
        first.setdefault(t.activities, i)
    ranked = sorted(variants.items(), key=lambda kv: (-kv[1], first[kv[0]]))[:n_traces]
    containing = Counter(a for t in log.traces for a in set(t.activities))
    cut = _as_fraction(threshold)
    n = len(log)
    acts = [(a, Fraction(c, n)) for a, c in containing.items() if Fraction(c, n) >= cut]
    acts.sort(key=lambda kv: (-kv[1], kv[0]))
    return LogContext(tuple(ranked), tuple(acts), n_traces, threshold)


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    sections: Tuple[Tuple[str, str], ...]

    @classmethod
    def parse(cls, text: str, name: str = "custom", required=PLACEHOLDERS) -> "PromptTemplate":
        parts = re.split(r"^\[\[(\w+)\]\]\s*$", text, flags=re.M)
        sections = tuple((parts[i], parts[i + 1].strip("\n")) for i in range(1, len(parts) - 1, 2))
        body = "\n".join(s for _, s in sections)
        missing = [p for p in required if "{{" + p + "}}" not in body]
        if missing:
            raise TemplateError(f"template {name!r} lacks placeholders: {', '.join(missing)}")
        return cls(name, sections)

    @classmethod
    def load(cls, resource: str = "detect_v1.txt", required=PLACEHOLDERS) -> "PromptTemplate":
        text = resources.files("tracerag.templates").joinpath(resource).read_text(encoding="utf-8")
        return cls.parse(text, resource.rsplit(".", 1)[0], required)

    def fill(self, values: Dict[str, str]) -> Dict[str, str]:
        """Render every section; sections whose placeholder is empty become ''."""
        out = {}
        for name, body in self.sections:
            holders = re.findall(r"\{\{(\w+)\}\}", body)
            unknown = [h for h in holders if h not in values]
            if unknown:
                raise TemplateError(f"no value for placeholder(s) {unknown}")
            if holders and not any(values[h] for h in holders):
                out[name] = ""
                continue
            out[name] = re.sub(r"\{\{(\w+)\}\}", lambda m: values[m.group(1)], body).strip()
        return out


_DEFAULT: Optional[PromptTemplate] = None


def default_template() -> PromptTemplate:
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = PromptTemplate.load()
    return _DEFAULT


@dataclass(frozen=True)
class PromptBundle:
    trace_id: str
    task_description: str
    activity_sequence: str
    log_context: str
    retrieved_examples: str
    trace: Optional[Trace] = field(default=None, compare=False, repr=False)
    context: Optional[LogContext] = field(default=None, compare=False, repr=False)

    @property
    def sections(self) -> Tuple[str, str, str, str]:
        return (self.task_description, self.activity_sequence, self.log_context, self.retrieved_examples)

    @property
    def rendered(self) -> str:
        return "\n\n".join(s for s in self.sections if s) + "\n"


_DESCRIBE = {
    PatternKind.INSERT: "Inserted",
    PatternKind.SKIP: "Skipped",
    PatternKind.REPEAT: "Repeated",
    PatternKind.REPLACE: "Replaced",
    PatternKind.SWAP: "Swapped",
}


def describe_pattern(d: DeviationPattern) -> str:
    """Readable annotation such as ``Skipped: 'Receive Goods'``."""
    a = ", ".join(quote_label(x) for x in d.fragment_a)
    if d.kind is PatternKind.REPLACE:
        return f"Replaced: {a} by {', '.join(quote_label(x) for x in d.fragment_b)}"
    if d.kind is PatternKind.SWAP:
        return f"Swapped: {a} and {', '.join(quote_label(x) for x in d.fragment_b)}"
    return f"{_DESCRIBE[d.kind]}: {a}"


def _percent(f: Fraction) -> str:
    return f"{float(f) * 100:.0f}%"


def render_examples(examples) -> str:
    """``examples`` holds ``(entry, similarity)`` or ``(index, entry, similarity)`` items."""
    blocks = []
    for i, item in enumerate(examples, 1):
        entry, sim = item[-2], item[-1]
        lines = [f"Example {i} (similarity {sim:.2f}):", f"Sequence: {trace_to_sentence(entry.trace)}"]
        if entry.deviations:
            lines.append("Known deviations:")
            lines += [f"- {describe_pattern(d)} => {format_pattern(d)}" for d in entry.deviations]
        else:
            lines.append("Known deviations: No Deviation.")
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks)


def render_prompt(trace: Trace, ctx: Optional[LogContext] = None, examples: Sequence = (),
                  template: Optional[PromptTemplate] = None) -> PromptBundle:
    template = template or default_template()
    ctx = ctx or LogContext()
    values = {
        "activity_sequence": trace_to_sentence(trace),
        "frequent_traces": "\n".join(
            f"- {trace_to_sentence(seq)} (observed in {count} {'trace' if count == 1 else 'traces'})"
            for seq, count in ctx.frequent_traces),
        "frequent_activities": "\n".join(f"- {a} ({_percent(s)} of traces)"
                                         for a, s in ctx.frequent_activities),
        "examples": render_examples(examples),
    }
    filled = template.fill(values)
    names = [n for n, _ in template.sections]

    def join(keys):
        return "\n\n".join(filled[k] for k in keys if filled.get(k))

    ctx_keys = [n for n in names if n in ("frequent_traces", "frequent_activities")]
    ex_keys = [n for n in names if n == "examples"]
    seq_keys = [n for n in names if n == "activity_sequence"]
    task_keys = [n for n in names if n not in ctx_keys + ex_keys + seq_keys]
    return PromptBundle(trace.id, join(task_keys), join(seq_keys), join(ctx_keys), join(ex_keys),
                        trace, ctx)
