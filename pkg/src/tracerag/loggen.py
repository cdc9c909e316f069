"""Desired-trace generation and seeded deviation injection."""
from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .core import (
    PATTERN_KINDS,
    DeviationPattern,
    EventLog,
    PatternKind,
    ProcessModel,
    Trace,
)
from .model_io import LogBundle


class InjectionError(ValueError):
    pass


@dataclass(frozen=True)
class InjectionConfig:
    deviating_share: float = 0.55
    max_deviations_per_trace: int = 3
    fragment_len_min: int = 1
    fragment_len_max: int = 3
    retries_per_trace: int = 10
    min_traces: int = 100
    seed: int = 0
    kinds: Tuple[PatternKind, ...] = PATTERN_KINDS
    # extra labels for Insert/Replace content; empty = the model's own alphabet
    foreign_alphabet: Tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "kinds", tuple(PatternKind(k) for k in self.kinds))
        object.__setattr__(self, "foreign_alphabet", tuple(self.foreign_alphabet))

    def validate(self) -> "InjectionConfig":
        if not 0.0 <= self.deviating_share <= 1.0:
            raise InjectionError(f"deviating_share {self.deviating_share} outside [0, 1]")
        if self.max_deviations_per_trace < 1 or self.retries_per_trace < 1 or self.min_traces < 1:
            raise InjectionError("max_deviations_per_trace, retries_per_trace and min_traces must be positive")
        if not 1 <= self.fragment_len_min <= self.fragment_len_max:
            raise InjectionError("need 1 <= fragment_len_min <= fragment_len_max")
        if not 0 <= self.seed < 2 ** 64:
            raise InjectionError("seed must be a 64-bit unsigned integer")
        if not self.kinds:
            raise InjectionError("no deviation kinds enabled")
        return self

    def to_dict(self) -> dict:
        return {
            "deviating_share": self.deviating_share,
            "max_deviations_per_trace": self.max_deviations_per_trace,
            "fragment_len_min": self.fragment_len_min,
            "fragment_len_max": self.fragment_len_max,
            "retries_per_trace": self.retries_per_trace,
            "min_traces": self.min_traces,
            "seed": self.seed,
            "kinds": [k.value for k in self.kinds],
            "foreign_alphabet": list(self.foreign_alphabet),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "InjectionConfig":
        return cls(**doc).validate()


def stream_seed(model_id: str, seed: int, salt: str = "") -> int:
    """Per-model random stream: stable hash of the model id XOR the master seed."""
    digest = hashlib.blake2b((salt + model_id).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") ^ (seed & 0xFFFFFFFFFFFFFFFF)


def model_to_log(model: ProcessModel, cfg: InjectionConfig = InjectionConfig()) -> EventLog:
    """One trace per sequence, then seeded duplicates up to ``cfg.min_traces``."""
    seqs = list(model.sequences)
    rng = random.Random(stream_seed(model.id, cfg.seed, "log:"))
    while len(seqs) < cfg.min_traces:
        seqs.append(rng.choice(model.sequences))
    return EventLog(model.id, tuple(Trace(f"{model.id}/t{i}", s) for i, s in enumerate(seqs)))


def _find(seq: Sequence[str], frag: Sequence[str], start: int = 0) -> int:
    n = len(frag)
    for i in range(start, len(seq) - n + 1):
        if tuple(seq[i:i + n]) == tuple(frag):
            return i
    return -1


def _at(seq, frag, i) -> bool:
    return 0 <= i and tuple(seq[i:i + len(frag)]) == tuple(frag)


def apply_pattern(trace: Trace, d: DeviationPattern, position: Optional[int] = None) -> Trace:
    """Apply one deviation to ``trace`` and return the deviated trace.

    ``position`` (default: ``d.position``) indexes the deviated trace:
    the start of the inserted fragment, the gap left by a skip, the start
    of the repeated copy, the start of the replacing fragment, or the
    slot where the later swap fragment lands. The later swap fragment is
    its first occurrence after ``fragment_a``. Without a position the
    first matching occurrence is used (Insert then needs one).
    """
    seq = list(trace.activities)
    a, b = list(d.fragment_a), list(d.fragment_b or ())
    pos = d.position if position is None else position
    k = d.kind
    if not a:
        raise InjectionError("empty fragment")
    if k is PatternKind.INSERT:
        if pos is None or not 0 <= pos <= len(seq):
            raise InjectionError(f"insert position {pos} outside 0..{len(seq)}")
        out = seq[:pos] + a + seq[pos:]
    elif k is PatternKind.REPEAT:
        i = _find(seq, a) if pos is None else pos - len(a)
        if not _at(seq, a, i) or i < 0:
            raise InjectionError(f"repeat fragment {a} not found at {i}")
        j = i + len(a)
        out = seq[:j] + a + seq[j:]
    elif k in (PatternKind.SKIP, PatternKind.REPLACE):
        i = _find(seq, a) if pos is None else pos
        if i < 0 or not _at(seq, a, i):
            raise InjectionError(f"{k.value.lower()} fragment {a} not found at {i}")
        repl = b if k is PatternKind.REPLACE else []
        if k is PatternKind.REPLACE and not b:
            raise InjectionError("replace needs fragment_b")
        out = seq[:i] + repl + seq[i + len(a):]
    else:
        if not b:
            raise InjectionError("swap needs fragment_b")
        i = _find(seq, a) if pos is None else pos
        if i < 0 or not _at(seq, a, i):
            raise InjectionError(f"swap fragment {a} not found at {i}")
        j = _find(seq, b, i + len(a))
        if j < 0:
            raise InjectionError(f"swap fragment {b} not found after {a}")
        out = seq[:i] + b + seq[i + len(a):j] + a + seq[j + len(b):]
    if not out:
        raise InjectionError("deviation removes every activity")
    return Trace(trace.id, tuple(out))


def replay(trace: Trace, deviations: Sequence[DeviationPattern]) -> Trace:
    for d in deviations:
        trace = apply_pattern(trace, d)
    return trace


def is_valid_deviation(deviated, model: ProcessModel) -> bool:
    """True iff the deviated activity sequence is not desired behavior."""
    seq = deviated.activities if isinstance(deviated, Trace) else tuple(deviated)
    return seq not in model


def _draw_candidate(rng: random.Random, seq: Tuple[str, ...], kind: PatternKind,
                    cfg: InjectionConfig, alphabet: Sequence[str]) -> Optional[DeviationPattern]:
    """Draw one deviation of ``kind`` for ``seq``, or None if it does not fit."""
    lo, hi = cfg.fragment_len_min, cfg.fragment_len_max
    n = len(seq)

    def length():
        return rng.randint(lo, hi)

    def contiguous(max_end=n, min_start=0):
        size = length()
        if max_end - min_start < size:
            return None
        start = rng.randint(min_start, max_end - size)
        return start, seq[start:start + size]

    if kind is PatternKind.INSERT:
        frag = tuple(rng.choice(alphabet) for _ in range(length()))
        return DeviationPattern(kind, frag, None, rng.randint(0, n))
    if kind is PatternKind.SKIP:
        got = contiguous()
        if got is None or len(got[1]) == n:
            return None
        return DeviationPattern(kind, got[1], None, got[0])
    if kind is PatternKind.REPEAT:
        got = contiguous()
        if got is None:
            return None
        start, frag = got
        return DeviationPattern(kind, frag, None, start + len(frag))
    if kind is PatternKind.REPLACE:
        got = contiguous()
        if got is None:
            return None
        new = tuple(rng.choice(alphabet) for _ in range(length()))
        if new == got[1]:
            return None
        return DeviationPattern(kind, got[1], new, got[0])
    # swap: two non-overlapping fragments, the later one at its first occurrence
    first = contiguous()
    if first is None:
        return None
    i, a = first
    second = contiguous(min_start=i + len(a))
    if second is None:
        return None
    b = second[1]
    if a == b:
        return None
    return DeviationPattern(kind, a, b, i)


@dataclass
class InjectionReport:
    """Bookkeeping of one injection run."""

    n_traces: int = 0
    targeted: List[str] = field(default_factory=list)
    drawn_counts: Dict[str, int] = field(default_factory=dict)
    accepted_counts: Dict[str, int] = field(default_factory=dict)
    rejected: int = 0

    @property
    def realized_share(self) -> float:
        return sum(1 for v in self.accepted_counts.values() if v) / (self.n_traces or 1)

    @property
    def mean_drawn(self) -> float:
        return sum(self.drawn_counts.values()) / (len(self.drawn_counts) or 1)


class DeviationInjector(BaseEstimator):
    """Inject seeded deviations into desired traces of one process model.

    ``fit`` takes the :class:`ProcessModel` that defines desired behavior;
    ``transform`` maps an :class:`EventLog` of desired traces to a
    :class:`LogBundle` with ground truth. ``report_`` holds the drawn and
    accepted deviation counts of the last transform.
    """

    def __init__(self, deviating_share=0.55, max_deviations_per_trace=3, fragment_len_min=1,
                 fragment_len_max=3, retries_per_trace=10, seed=0, kinds=PATTERN_KINDS,
                 foreign_alphabet=()):
        self.deviating_share = deviating_share
        self.max_deviations_per_trace = max_deviations_per_trace
        self.fragment_len_min = fragment_len_min
        self.fragment_len_max = fragment_len_max
        self.retries_per_trace = retries_per_trace
        self.seed = seed
        self.kinds = kinds
        self.foreign_alphabet = foreign_alphabet

    @classmethod
    def from_config(cls, cfg: InjectionConfig) -> "DeviationInjector":
        return cls(cfg.deviating_share, cfg.max_deviations_per_trace, cfg.fragment_len_min,
                   cfg.fragment_len_max, cfg.retries_per_trace, cfg.seed, cfg.kinds,
                   cfg.foreign_alphabet)

    def config(self) -> InjectionConfig:
        return InjectionConfig(self.deviating_share, self.max_deviations_per_trace,
                               self.fragment_len_min, self.fragment_len_max,
                               self.retries_per_trace, 1, self.seed, tuple(self.kinds),
                               tuple(self.foreign_alphabet)).validate()

    def fit(self, model: ProcessModel, y=None):
        if not isinstance(model, ProcessModel):
            raise TypeError("DeviationInjector.fit expects a ProcessModel")
        self.config()
        self.model_ = model
        self.alphabet_ = tuple(sorted(set(model.alphabet) | set(self.foreign_alphabet)))
        return self

    def transform(self, log: EventLog) -> LogBundle:
        check_is_fitted(self, "model_")
        cfg, model = self.config(), self.model_
        for t in log.traces:
            if t.activities not in model:
                raise InjectionError(f"trace {t.id!r} is not desired behavior of model {model.id!r}")
        rng = random.Random(stream_seed(model.id, cfg.seed, "inject:"))
        n_target = int(cfg.deviating_share * len(log) + 1e-9)
        targets = set(rng.sample(range(len(log)), n_target))
        report = InjectionReport(n_traces=len(log))
        traces, gt = [], {}
        for idx, t in enumerate(log.traces):
            if idx not in targets:
                traces.append(t)
                gt[t.id] = ()
                continue
            k = rng.randint(1, cfg.max_deviations_per_trace)
            report.targeted.append(t.id)
            report.drawn_counts[t.id] = k
            seq, accepted, retries = t.activities, [], 0
            while len(accepted) < k and retries < cfg.retries_per_trace:
                kind = rng.choice(cfg.kinds)
                cand = _draw_candidate(rng, seq, kind, cfg, self.alphabet_)
                if cand is not None:
                    new = apply_pattern(Trace(t.id, seq), cand).activities
                    if is_valid_deviation(new, model):
                        accepted.append(cand)
                        seq = new
                        continue
                retries += 1
                report.rejected += 1
            report.accepted_counts[t.id] = len(accepted)
            traces.append(Trace(t.id, seq))
            gt[t.id] = tuple(accepted)
        self.report_ = report
        return LogBundle(EventLog(log.name, tuple(traces)), gt)


def inject_deviations(log: EventLog, model: ProcessModel,
                      cfg: InjectionConfig = InjectionConfig()) -> LogBundle:
    cfg.validate()
    return DeviationInjector.from_config(cfg).fit(model).transform(log)


def synthesize_bundle(model: ProcessModel, cfg: InjectionConfig = InjectionConfig()) -> LogBundle:
    """``model_to_log`` followed by ``inject_deviations``."""
    return inject_deviations(model_to_log(model, cfg), model, cfg)


def with_share(cfg: InjectionConfig, share: float) -> InjectionConfig:
    return replace(cfg, deviating_share=share).validate()
