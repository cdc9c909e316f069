"""Domain types: traces, logs, process models and deviation patterns.

Activities are plain ``str`` labels. They are trimmed on entry into a
:class:`Trace` or :class:`ProcessModel` and compared case-sensitively.
"""
from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Tuple

Activity = str
Sequence_ = Tuple[Activity, ...]


class TraceError(ValueError):
    """Raised when a trace, log or model violates its invariants."""


def activity(label: object) -> Activity:
    """Trim and validate an activity label."""
    if not isinstance(label, str):
        raise TraceError(f"activity label must be a string, got {type(label).__name__}")
    label = label.strip()
    if not label:
        raise TraceError("activity label is empty")
    return label


def activities(labels: Iterable[object]) -> Sequence_:
    return tuple(activity(a) for a in labels)


@dataclass(frozen=True)
class Trace:
    id: str
    activities: Sequence_

    def __post_init__(self):
        acts = activities(self.activities)
        if not acts:
            raise TraceError(f"trace {self.id!r} has no activities")
        object.__setattr__(self, "activities", acts)

    def __len__(self):
        return len(self.activities)


@dataclass(frozen=True)
class EventLog:
    name: str
    traces: Tuple[Trace, ...]

    def __post_init__(self):
        traces = tuple(self.traces)
        seen = set()
        for t in traces:
            if t.id in seen:
                raise TraceError(f"duplicate trace id {t.id!r} in log {self.name!r}")
            seen.add(t.id)
        object.__setattr__(self, "traces", traces)

    def __len__(self):
        return len(self.traces)

    def __iter__(self):
        return iter(self.traces)

    @property
    def ids(self):
        return [t.id for t in self.traces]

    def by_id(self):
        return {t.id: t for t in self.traces}


@dataclass(frozen=True)
class ProcessModel:
    """A finite set of desired activity sequences.

    ``sequences`` keeps a deterministic order (document order for parsed
    models, lexicographic for playouts) so seeded generators are stable.
    ``truncated`` marks playouts cut off at their sequence cap.
    """

    id: str
    sequences: Tuple[Sequence_, ...]
    alphabet: frozenset = frozenset()
    truncated: bool = field(default=False, compare=False)

    def __post_init__(self):
        seqs = tuple(activities(s) for s in self.sequences)
        if not seqs:
            raise TraceError(f"model {self.id!r} has no sequences")
        if any(len(s) == 0 for s in seqs):
            raise TraceError(f"model {self.id!r} contains an empty sequence")
        if len(set(seqs)) != len(seqs):
            raise TraceError(f"model {self.id!r}: duplicate sequence")
        alphabet = frozenset(activities(self.alphabet)) | {a for s in seqs for a in s}
        object.__setattr__(self, "sequences", seqs)
        object.__setattr__(self, "alphabet", alphabet)
        object.__setattr__(self, "_members", frozenset(seqs))

    def __contains__(self, seq) -> bool:
        return tuple(seq) in self._members

    def __len__(self):
        return len(self.sequences)


class PatternKind(str, enum.Enum):
    INSERT = "Insert"
    SKIP = "Skip"
    REPEAT = "Repeat"
    REPLACE = "Replace"
    SWAP = "Swap"

    @property
    def two_fragments(self) -> bool:
        return self in (PatternKind.REPLACE, PatternKind.SWAP)

    @property
    def category(self) -> str:
        return _CATEGORY[self]

    def __str__(self):
        return self.value


_CATEGORY = {
    PatternKind.INSERT: "insert",
    PatternKind.SKIP: "skip",
    PatternKind.REPEAT: "repeat",
    PatternKind.REPLACE: "replace",
    PatternKind.SWAP: "swap",
}

PATTERN_KINDS = tuple(PatternKind)


@dataclass(frozen=True)
class DeviationPattern:
    """One deviation: a kind plus the affected fragment(s).

    ``position`` is ground-truth bookkeeping (an index into the deviated
    trace) and does not take part in equality.
    """

    kind: PatternKind
    fragment_a: Sequence_
    fragment_b: Optional[Sequence_] = None
    position: Optional[int] = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "kind", PatternKind(self.kind))
        object.__setattr__(self, "fragment_a", tuple(self.fragment_a))
        if self.fragment_b is not None:
            object.__setattr__(self, "fragment_b", tuple(self.fragment_b))

    @property
    def fragments(self) -> Tuple[Sequence_, ...]:
        if self.fragment_b is None:
            return (self.fragment_a,)
        return (self.fragment_a, self.fragment_b)

    def without_position(self) -> "DeviationPattern":
        return DeviationPattern(self.kind, self.fragment_a, self.fragment_b)

    def __str__(self):
        return format_pattern(self)


def pattern(kind, fragment_a: Sequence[str], fragment_b: Optional[Sequence[str]] = None,
            position: Optional[int] = None) -> DeviationPattern:
    """Shorthand constructor: ``pattern("Replace", ["a"], ["b"])``."""
    return DeviationPattern(PatternKind(kind), tuple(fragment_a),
                            None if fragment_b is None else tuple(fragment_b), position)


def validate_pattern(d: DeviationPattern, trace_length: Optional[int] = None) -> Optional[str]:
    """Return the first violated invariant of ``d`` as text, or ``None``."""
    if not d.fragment_a:
        return "fragment_a empty"
    for a in d.fragment_a + (d.fragment_b or ()):
        if not isinstance(a, str) or not a.strip():
            return "empty activity label"
        if a != a.strip():
            return "activity label not trimmed"
    if d.kind.two_fragments:
        if d.fragment_b is None or not d.fragment_b:
            return "fragment_b empty"
        if d.fragment_a == d.fragment_b:
            return f"{d.kind.value.lower()} fragments identical"
    elif d.fragment_b is not None:
        return f"fragment_b not allowed for {d.kind.value}"
    if d.position is not None:
        if d.position < 0:
            return "position negative"
        if trace_length is not None and d.position > trace_length:
            return "position out of trace bounds"
    return None


class PrimitiveKind(str, enum.Enum):
    INSERTED = "InsertedActivity"
    SKIPPED = "SkippedActivity"


@dataclass(frozen=True)
class PrimitiveItem:
    kind: PrimitiveKind
    activity: Activity
    multiplicity: int = 1

    def __post_init__(self):
        if self.multiplicity < 1:
            raise ValueError("multiplicity must be >= 1")


def normalize_deviation(d: DeviationPattern) -> Counter:
    """Rewrite a deviation as a multiset of inserted/skipped activities.

    Keys are ``(PrimitiveKind, activity)``; values are multiplicities.
    A swapped activity counts once as skipped and once as inserted.
    """
    ins, skp = PrimitiveKind.INSERTED, PrimitiveKind.SKIPPED
    out: Counter = Counter()
    k = d.kind
    if k in (PatternKind.INSERT, PatternKind.REPEAT):
        out.update((ins, a) for a in d.fragment_a)
    elif k is PatternKind.SKIP:
        out.update((skp, a) for a in d.fragment_a)
    elif k is PatternKind.REPLACE:
        out.update((skp, a) for a in d.fragment_a)
        out.update((ins, a) for a in d.fragment_b)
    else:
        moved = d.fragment_a + d.fragment_b
        out.update((skp, a) for a in moved)
        out.update((ins, a) for a in moved)
    return out


def primitive_items(d: DeviationPattern) -> list:
    """:func:`normalize_deviation` as a sorted list of :class:`PrimitiveItem`."""
    counts = normalize_deviation(d)
    return [PrimitiveItem(kind, act, n)
            for (kind, act), n in sorted(counts.items(), key=lambda kv: (kv[0][0].value, kv[0][1]))]


def pattern_mass(d: DeviationPattern) -> int:
    """Number of primitive items a pattern normalizes to."""
    return sum(normalize_deviation(d).values())


NO_DEVIATION = "No Deviation."


def quote_label(label: str) -> str:
    return "'" + label.replace("\\", "\\\\").replace("'", "\\'") + "'"


def format_pattern(d: DeviationPattern) -> str:
    """Render ``d`` in constructor syntax, e.g. ``Swap(['Approve'], ['Ship'])``."""
    parts = ["[" + ", ".join(quote_label(a) for a in frag) + "]" for frag in d.fragments]
    return f"{d.kind.value}({', '.join(parts)})"


def format_patterns(patterns: Iterable[DeviationPattern]) -> str:
    """One constructor per line, or ``No Deviation.`` for an empty list."""
    lines = [format_pattern(d) for d in patterns]
    return "\n".join(lines) if lines else NO_DEVIATION
