"""Per-trace detection: prompt, generate, parse.

:class:`RagDeviationDetector` wraps the offline and online phases in a
scikit-learn style estimator: ``fit`` builds the knowledge base from a
model collection, ``predict`` analyses every trace of a log.
"""
from __future__ import annotations

import json
import os
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .backends import GenerationConfig, make_backend
from .core import (
    NO_DEVIATION,
    PATTERN_KINDS,
    DeviationPattern,
    PatternKind,
    Trace,
    validate_pattern,
)
from .embed import HashedNgramEmbedder, trace_to_sentence
from .kb import KnowledgeBase, build_kb, check_compatible
from .loggen import InjectionConfig
from .model_io import LogBundle, SchemaError, pattern_from_dict, pattern_to_dict
from .promptgen import LogContext, PromptTemplate, extract_log_context, render_prompt
from .validation import check_log, check_models

STRICT, REPAIRED, FAILED = "strict", "repaired", "failed"


class OutputParseError(ValueError):
    """A reply that contains neither deviation constructors nor ``No Deviation.``."""

    def __init__(self, text: str):
        super().__init__(f"unparseable reply: {text[:200]!r}")
        self.text = text


# --- parsing ----------------------------------------------------------------

_KIND_RE = re.compile(r"\b(" + "|".join(k.value for k in PATTERN_KINDS) + r")\s*\(")


class _Cursor:
    def __init__(self, text: str, pos: int):
        self.text, self.pos = text, pos

    def ws(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def eat(self, ch: str) -> bool:
        self.ws()
        if self.text.startswith(ch, self.pos):
            self.pos += len(ch)
            return True
        return False

    def literal(self) -> Optional[str]:
        self.ws()
        if not self.text.startswith("'", self.pos):
            return None
        out, i = [], self.pos + 1
        while i < len(self.text):
            ch = self.text[i]
            if ch == "\\" and i + 1 < len(self.text):
                out.append(self.text[i + 1])
                i += 2
                continue
            if ch == "'":
                self.pos = i + 1
                return "".join(out)
            out.append(ch)
            i += 1
        return None

    def fragment(self) -> Optional[Tuple[str, ...]]:
        if not self.eat("["):
            return None
        items = []
        if self.eat("]"):
            return ()
        while True:
            lit = self.literal()
            if lit is None:
                return None
            items.append(lit.strip())
            if self.eat("]"):
                return tuple(items)
            if not self.eat(","):
                return None


def _constructor_at(text: str, m) -> Tuple[Optional[DeviationPattern], int]:
    kind = PatternKind(m.group(1))
    cur = _Cursor(text, m.end())
    a = cur.fragment()
    b = None
    if a is not None and kind.two_fragments:
        b = cur.fragment() if cur.eat(",") else None
        if b is None:
            return None, m.end()
    if a is None or not cur.eat(")"):
        return None, m.end()
    d = DeviationPattern(kind, a, b)
    if validate_pattern(d) is not None:
        return None, cur.pos
    return d, cur.pos


def parse_output(reply: str) -> List[DeviationPattern]:
    """Read deviations written as ``Kind([...])`` / ``Kind([...], [...])``.

    Returns the constructors in textual order, or ``[]`` when the reply
    only says ``No Deviation.``; constructors win when both appear.
    Raises :class:`OutputParseError` when neither is present.
    """
    found, pos = [], 0
    while True:
        m = _KIND_RE.search(reply, pos)
        if m is None:
            break
        d, pos = _constructor_at(reply, m)
        if d is not None:
            found.append(d)
    if found:
        return found
    if NO_DEVIATION in reply:
        return []
    raise OutputParseError(reply)


_REPAIR_TEMPLATE: Optional[PromptTemplate] = None


def repair_prompt(reply: str) -> str:
    global _REPAIR_TEMPLATE
    if _REPAIR_TEMPLATE is None:
        _REPAIR_TEMPLATE = PromptTemplate.load("repair_v1.txt", required=("reply",))
    filled = _REPAIR_TEMPLATE.fill({"reply": reply})
    return "\n\n".join(s for s in filled.values() if s) + "\n"


def repair_parse(reply: str, backend, config: GenerationConfig = GenerationConfig(),
                 trace_id: Optional[str] = None) -> List[DeviationPattern]:
    """One re-prompt asking the backend to restate ``reply`` in the output format.

    Must only be called for replies that fail strict parsing. Raises
    :class:`OutputParseError` if the restated reply is still unparseable.
    """
    try:
        parse_output(reply)
    except OutputParseError:
        pass
    else:
        raise ValueError("repair_parse called on a reply that parses strictly")
    restated = backend.complete(repair_prompt(reply), config, trace_id=trace_id, purpose="repair")
    return parse_output(restated)


# --- heuristic reference detector -------------------------------------------

def indel_alignment(trace: Sequence[str], reference: Sequence[str]) -> Tuple[int, List[Tuple[str, str]]]:
    """Minimum insert/delete alignment with unit costs.

    Returns ``(cost, moves)`` where moves are ``("sync"|"insert"|"skip", activity)``
    in trace order. Ties prefer a synchronous move, then an insertion.
    """
    n, m = len(trace), len(reference)
    cost = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        for j in range(m + 1):
            if i == 0 or j == 0:
                cost[i][j] = i + j
            elif trace[i - 1] == reference[j - 1]:
                cost[i][j] = min(cost[i - 1][j - 1], cost[i - 1][j] + 1, cost[i][j - 1] + 1)
            else:
                cost[i][j] = min(cost[i - 1][j], cost[i][j - 1]) + 1
    moves = []
    i, j = n, m
    while i or j:
        if i and j and trace[i - 1] == reference[j - 1] and cost[i][j] == cost[i - 1][j - 1]:
            moves.append(("sync", trace[i - 1]))
            i, j = i - 1, j - 1
        elif i and cost[i][j] == cost[i - 1][j] + 1:
            moves.append(("insert", trace[i - 1]))
            i -= 1
        else:
            moves.append(("skip", reference[j - 1]))
            j -= 1
    moves.reverse()
    return cost[n][m], moves


def heuristic_reference_detect(trace, references: Sequence[Sequence[str]]) -> List[DeviationPattern]:
    """Explain ``trace`` as inserts/skips against its closest reference sequence."""
    if not references:
        raise ValueError("heuristic detection needs at least one reference sequence")
    acts = trace.activities if isinstance(trace, Trace) else tuple(trace)
    best = None
    for ref in references:
        cost, moves = indel_alignment(acts, tuple(ref))
        if best is None or cost < best[0]:
            best = (cost, moves)
    out: List[DeviationPattern] = []
    run_kind, run = None, []
    for move, act in best[1] + [("sync", None)]:
        if move != run_kind and run:
            out.append(DeviationPattern(PatternKind.INSERT if run_kind == "insert" else PatternKind.SKIP, tuple(run)))
            run = []
        run_kind = move
        if move != "sync":
            run.append(act)
    return out


# --- orchestration -----------------------------------------------------------

@dataclass(frozen=True)
class DetectionResult:
    trace_id: str
    deviations: Tuple[DeviationPattern, ...]
    raw_reply: str
    parse_status: str
    retrieved_ids: Tuple[int, ...] = ()
    error: Optional[str] = None
    prompt: str = field(default="", compare=False, repr=False)
    repair_reply: Optional[str] = field(default=None, compare=False, repr=False)

    @property
    def failed(self) -> bool:
        return self.parse_status == FAILED

    @property
    def conforming(self) -> bool:
        return not self.failed and not self.deviations


def detect_trace(trace: Trace, kb: Optional[KnowledgeBase], ctx: Optional[LogContext], backend, k: int = 5,
                 embedder=None, template: Optional[PromptTemplate] = None,
                 config: GenerationConfig = GenerationConfig(),
                 exclude_models: Sequence[str] = ()) -> DetectionResult:
    """Embed, retrieve, render, generate and parse for one trace."""
    examples = []
    if k > 0 and kb is not None and len(kb):
        embedder = embedder or HashedNgramEmbedder(kb.dim)
        check_compatible(kb, embedder)
        query = embedder.embed(trace_to_sentence(trace))
        if any(query):
            examples = kb.retrieve_top_k(query, k, exclude_models)
    bundle = render_prompt(trace, ctx, examples, template)
    prompt = bundle.rendered
    ids = tuple(i for i, _, _ in examples)
    try:
        reply = backend.complete(prompt, config, trace_id=trace.id, bundle=bundle)
    except Exception as exc:  # transport failures become failed results
        return DetectionResult(trace.id, (), "", FAILED, ids, f"backend error: {exc}", prompt)
    try:
        return DetectionResult(trace.id, tuple(parse_output(reply)), reply, STRICT, ids, None, prompt)
    except OutputParseError:
        pass
    try:
        devs = repair_parse(reply, backend, config, trace.id)
    except OutputParseError as exc:
        return DetectionResult(trace.id, (), reply, FAILED, ids, "unparseable after repair", prompt, exc.text)
    except Exception as exc:
        return DetectionResult(trace.id, (), reply, FAILED, ids, f"repair failed: {exc}", prompt)
    return DetectionResult(trace.id, tuple(devs), reply, REPAIRED, ids, None, prompt)


class RagDeviationDetector(BaseEstimator):
    """Retrieval-augmented detector of undesired behavior.

    Parameters
    ----------
    backend : str or backend object
        ``"null"``, ``"oracle"``, ``"heuristic"``, ``"scripted:<file>"``,
        ``"remote:<url>#<model>"`` or any object with ``complete``.
    k : int
        Retrieved examples per prompt.
    n_traces, activity_threshold :
        Log context: number of most frequent traces and the minimum share
        of traces an activity must occur in.
    dim : int
        Dimension of the built-in embedder (ignored if ``embedder`` given).
    share : float
        Deviating share used when generating knowledge-base traces.
    seed : int
        Seeds knowledge-base generation and the backend's sampling.
    kb : KnowledgeBase, optional
        Use an existing knowledge base; ``fit`` then skips generation.
    """

    def __init__(self, backend="null", k=5, n_traces=3, activity_threshold=0.10, dim=256,
                 share=0.5, seed=0, injection=None, kb=None, embedder=None, temperature=0.0,
                 max_tokens=1024, workers=None, exclude_models=(), template=None):
        self.backend = backend
        self.k = k
        self.n_traces = n_traces
        self.activity_threshold = activity_threshold
        self.dim = dim
        self.share = share
        self.seed = seed
        self.injection = injection
        self.kb = kb
        self.embedder = embedder
        self.temperature = temperature
        self.max_tokens = max_tokens
        self.workers = workers
        self.exclude_models = exclude_models
        self.template = template

    def _embedder(self):
        return self.embedder if self.embedder is not None else HashedNgramEmbedder(self.dim)

    def fit(self, models=None, y=None):
        """Build (or adopt) the knowledge base from a list of process models."""
        start = time.perf_counter()
        self.embedder_ = self._embedder()
        if self.kb is not None:
            check_compatible(self.kb, self.embedder_)
            self.kb_ = self.kb
        elif models is None or self.k == 0:
            self.kb_ = None
        else:
            models = check_models(models)
            cfg = self.injection or InjectionConfig()
            cfg = InjectionConfig(**{**cfg.to_dict(), "seed": self.seed})
            self.kb_ = build_kb(models, cfg, self.embedder_, self.share)
        self.fit_seconds_ = time.perf_counter() - start
        return self

    def generation_config(self) -> GenerationConfig:
        return GenerationConfig(self.temperature, self.seed, self.max_tokens)

    def predict(self, X, truth=None) -> List[DetectionResult]:
        """Detect deviations in every trace of ``X`` (an EventLog or LogBundle).

        The log context comes from ``X`` itself. A LogBundle also supplies
        ground truth for the oracle backend.
        """
        check_is_fitted(self, "embedder_")
        if isinstance(X, LogBundle):
            truth = truth if truth is not None else X.ground_truth
            X = X.log
        log = check_log(X)
        backend = make_backend(self.backend, truth)
        ctx = extract_log_context(log, self.n_traces, self.activity_threshold)
        config = self.generation_config()
        template = self.template

        def one(t):
            return detect_trace(t, self.kb_, ctx, backend, self.k, self.embedder_, template, config,
                                tuple(self.exclude_models))

        start = time.perf_counter()
        workers = self.workers or os.cpu_count() or 1
        if workers > 1 and getattr(backend, "concurrent", False) and len(log) > 1:
            with ThreadPoolExecutor(workers) as pool:
                results = list(pool.map(one, log.traces))
        else:
            results = [one(t) for t in log.traces]
        self.last_predict_seconds_ = time.perf_counter() - start
        self.context_ = ctx
        self.backend_ = backend
        return results


# --- results files -------------------------------------------------------------

def result_to_dict(r: DetectionResult, raw_reply_path: Optional[str] = None) -> dict:
    out = {"trace_id": r.trace_id, "deviations": [pattern_to_dict(d) for d in r.deviations],
           "parse_status": r.parse_status, "retrieved_ids": list(r.retrieved_ids),
           "raw_reply_path": raw_reply_path}
    if r.error:
        out["error"] = r.error
    return out


def write_results(results: Sequence[DetectionResult], path, raw_reply_paths=None) -> None:
    """One JSON object per line, in the given order."""
    paths = raw_reply_paths or {}
    with open(path, "w", encoding="utf-8") as fh:
        for r in results:
            fh.write(json.dumps(result_to_dict(r, paths.get(r.trace_id)), sort_keys=True,
                                ensure_ascii=False) + "\n")


def read_results(path) -> List[DetectionResult]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                out.append(DetectionResult(
                    obj["trace_id"], tuple(pattern_from_dict(d) for d in obj["deviations"]), "",
                    obj["parse_status"], tuple(obj.get("retrieved_ids", ())), obj.get("error")))
            except (ValueError, KeyError, TypeError) as exc:
                raise SchemaError(f"{path}:{n}: bad detection result ({exc})") from exc
            if out[-1].parse_status not in (STRICT, REPAIRED, FAILED):
                raise SchemaError(f"{path}:{n}: unknown parse_status {out[-1].parse_status!r}")
    return out
