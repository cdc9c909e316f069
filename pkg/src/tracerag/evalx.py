"""Scoring detections against ground truth, plus reporting helpers."""
from __future__ import annotations

import csv
import io
import json
import statistics
from collections import Counter
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

from .core import PATTERN_KINDS, DeviationPattern, normalize_deviation, pattern_mass
from .model_io import LogBundle

PATTERN_CATEGORIES = tuple(k.category for k in PATTERN_KINDS)
CATEGORIES = PATTERN_CATEGORIES + ("conforming",)
LABELINGS = ("mirrored", "conventional")
ZERO = Fraction(0)


@dataclass(frozen=True)
class Cell:
    tp: Fraction = ZERO
    fp: Fraction = ZERO
    fn: Fraction = ZERO

    def __add__(self, other: "Cell") -> "Cell":
        return Cell(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    def swapped(self) -> "Cell":
        return Cell(self.tp, self.fn, self.fp)


@dataclass(frozen=True)
class ScoreCounts:
    """tp/fp/fn per category as exact fractions; ``failures`` counts unparsed traces."""

    cells: Mapping[str, Cell] = field(default_factory=dict)
    failures: int = 0
    traces: int = 0

    def __post_init__(self):
        unknown = set(self.cells) - set(CATEGORIES)
        if unknown:
            raise ValueError(f"unknown categories {sorted(unknown)}")
        object.__setattr__(self, "cells", {c: self.cells.get(c, Cell()) for c in CATEGORIES})

    def __getitem__(self, category: str) -> Cell:
        return self.cells[category]

    def __add__(self, other: "ScoreCounts") -> "ScoreCounts":
        return ScoreCounts({c: self.cells[c] + other.cells[c] for c in CATEGORIES},
                           self.failures + other.failures, self.traces + other.traces)

    @classmethod
    def total(cls, counts: Iterable["ScoreCounts"]) -> "ScoreCounts":
        out = cls()
        for c in counts:
            out = out + c
        return out

    def to_dict(self) -> dict:
        cells = {c: {"tp": str(v.tp), "fp": str(v.fp), "fn": str(v.fn)} for c, v in self.cells.items()}
        return {"cells": cells, "failures": self.failures, "traces": self.traces}


def _phase_one(gt, pred):
    """Same-kind greedy matching. Returns per-pattern residual primitives and the pairs."""
    gt_res = [normalize_deviation(g) for g in gt]
    pred_res = [normalize_deviation(p) for p in pred]
    used = set()
    pairs = []
    for gi, g in enumerate(gt):
        best, best_overlap = None, 0
        for pi, p in enumerate(pred):
            if pi in used or p.kind is not g.kind:
                continue
            overlap = sum((gt_res[gi] & pred_res[pi]).values())
            if overlap > best_overlap:
                best, best_overlap = pi, overlap
        if best is not None:
            used.add(best)
            common = gt_res[gi] & pred_res[best]
            gt_res[gi] = gt_res[gi] - common
            pred_res[best] = pred_res[best] - common
            pairs.append((gi, best, best_overlap))
    return gt_res, pred_res, pairs


def _phase_two(gt_res: List[Counter], pred_res: List[Counter]) -> List[int]:
    """Pool residual predictions and hand them out in GT order (earlier predictions spent first).

    Mutates both lists to what is left over; returns matched mass per GT pattern.
    """
    matched = []
    for res in gt_res:
        got = 0
        for key in sorted(res, key=lambda k: (k[0].value, k[1])):
            need = res[key]
            for pr in pred_res:
                if need == 0:
                    break
                take = min(need, pr.get(key, 0))
                if take:
                    pr[key] -= take
                    need -= take
                    got += take
            res[key] = need
        matched.append(got)
    return matched


def matched_mass(gt: Sequence[DeviationPattern], pred: Sequence[DeviationPattern]) -> int:
    """Total primitive mass the two-phase matcher credits."""
    gt_res, pred_res, pairs = _phase_one(gt, pred)
    return sum(o for _, _, o in pairs) + sum(_phase_two(gt_res, pred_res))


def score_trace(gt: Sequence[DeviationPattern], pred: Sequence[DeviationPattern], failed: bool = False,
                conforming_labeling: str = "mirrored") -> ScoreCounts:
    """Partial-credit counts for one trace.

    Every GT pattern adds exactly 1 to ``tp + fn`` of its category, split by
    the share of its primitive activities that were found. Unmatched
    predicted mass adds to ``fp`` of the prediction's own category, again
    as a share of that prediction.

    ``failed`` marks a reply that could not be parsed: GT patterns count
    as missed and the trace is left out of the conforming class.
    """
    if conforming_labeling not in LABELINGS:
        raise ValueError(f"conforming_labeling must be one of {LABELINGS}")
    gt, pred = list(gt), [] if failed else list(pred)
    gt_res, pred_res, pairs = _phase_one(gt, pred)
    credit = [0] * len(gt)
    for gi, _, overlap in pairs:
        credit[gi] += overlap
    for gi, extra in enumerate(_phase_two(gt_res, pred_res)):
        credit[gi] += extra

    acc = {c: [ZERO, ZERO, ZERO] for c in CATEGORIES}
    for g, got in zip(gt, credit):
        share = Fraction(got, pattern_mass(g))
        acc[g.kind.category][0] += share
        acc[g.kind.category][2] += 1 - share
    for p, left in zip(pred, pred_res):
        rest = sum(left.values())
        if rest:
            acc[p.kind.category][1] += Fraction(rest, pattern_mass(p))

    if not failed:
        conf = acc["conforming"]
        if not gt and not pred:
            conf[0] += 1
        elif gt and not pred:
            conf[2 if conforming_labeling == "mirrored" else 1] += 1
        elif pred and not gt:
            conf[1 if conforming_labeling == "mirrored" else 2] += 1
    return ScoreCounts({c: Cell(*v) for c, v in acc.items()}, int(failed), 1)


# --- metrics ------------------------------------------------------------------

@dataclass(frozen=True)
class Metrics:
    """Precision, recall and F1; ``None`` marks an undefined value (0/0)."""

    precision: Optional[Fraction]
    recall: Optional[Fraction]
    f1: Optional[Fraction]

    @classmethod
    def of(cls, cell: Cell) -> "Metrics":
        p = cell.tp / (cell.tp + cell.fp) if cell.tp + cell.fp else None
        r = cell.tp / (cell.tp + cell.fn) if cell.tp + cell.fn else None
        if p is None or r is None:
            f1 = None
        else:
            f1 = 2 * p * r / (p + r) if p + r else ZERO
        return cls(p, r, f1)

    def as_tuple(self):
        return (self.precision, self.recall, self.f1)


METRIC_NAMES = ("precision", "recall", "f1")


def _mean_defined(values) -> Optional[Fraction]:
    vals = [v for v in values if v is not None]
    return sum(vals, ZERO) / len(vals) if vals else None


def _fmt(v: Optional[Fraction], places: int = 2) -> str:
    return "n/a" if v is None else f"{round_half_up(v, places):.{places}f}"


def round_half_up(value, places: int = 2) -> Decimal:
    """Decimal rounding with ties away from zero, applied to the exact value."""
    if isinstance(value, Fraction):
        value = Decimal(value.numerator) / Decimal(value.denominator)
    return Decimal(value).quantize(Decimal(1).scaleb(-places), rounding=ROUND_HALF_UP)


@dataclass
class MetricsReport:
    rows: Dict[str, Dict[str, Metrics]]
    counts: Dict[str, ScoreCounts]
    average: Dict[str, Metrics]
    metadata: Dict[str, object] = field(default_factory=dict)

    def failure_rate(self, log: str) -> Fraction:
        c = self.counts[log]
        return Fraction(c.failures, c.traces) if c.traces else ZERO

    def to_dict(self) -> dict:
        def m(x: Metrics):
            return {n: None if v is None else float(v) for n, v in zip(METRIC_NAMES, x.as_tuple())}

        return {
            "logs": {log: {"metrics": {c: m(v) for c, v in row.items()},
                           "counts": self.counts[log].to_dict(),
                           "failure_rate": float(self.failure_rate(log))}
                     for log, row in self.rows.items()},
            "average": {c: m(v) for c, v in self.average.items()},
            "metadata": self.metadata,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_text(self, log: Optional[str] = None) -> str:
        """Aligned table: one row per category, columns precision/recall/F1."""
        source = self.average if log is None else self.rows[log]
        title = "average over logs" if log is None else log
        lines = [f"{title}", f"{'category':<12}{'prec.':>8}{'rec.':>8}{'F1':>8}"]
        for c in CATEGORIES:
            p, r, f = (_fmt(v) for v in source[c].as_tuple())
            lines.append(f"{c:<12}{p:>8}{r:>8}{f:>8}")
        if log is not None:
            lines.append(f"{'failures':<12}{_fmt(self.failure_rate(log)):>8}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["log", "category", "precision", "recall", "f1", "tp", "fp", "fn"])
        for log, row in self.rows.items():
            for c in CATEGORIES:
                cell = self.counts[log][c]
                vals = ["" if v is None else f"{float(v):.6f}" for v in row[c].as_tuple()]
                w.writerow([log, c, *vals, *(f"{float(x):.6f}" for x in (cell.tp, cell.fp, cell.fn))])
        for c in CATEGORIES:
            vals = ["" if v is None else f"{float(v):.6f}" for v in self.average[c].as_tuple()]
            w.writerow(["average", c, *vals, "", "", ""])
        return buf.getvalue()


def aggregate_metrics(counts: Union[Mapping[str, Iterable[ScoreCounts]], Iterable[ScoreCounts]],
                      metadata: Optional[dict] = None) -> MetricsReport:
    """Sum counts per log, compute metrics, then macro-average across logs.

    ``counts`` maps a log name to its per-trace counts; a flat iterable is
    treated as one log called ``"log"``. Undefined values are left out of
    the average.
    """
    if not isinstance(counts, Mapping):
        counts = {"log": counts}
    totals = {log: ScoreCounts.total(cs) for log, cs in counts.items()}
    rows = {log: {c: Metrics.of(t[c]) for c in CATEGORIES} for log, t in totals.items()}
    average = {}
    for c in CATEGORIES:
        cols = zip(*(rows[log][c].as_tuple() for log in rows)) if rows else ((), (), ())
        average[c] = Metrics(*(_mean_defined(col) for col in cols))
    return MetricsReport(rows, totals, average, dict(metadata or {}))


def score_results(bundle: LogBundle, results, conforming_labeling: str = "mirrored") -> List[ScoreCounts]:
    """Score detection results (any objects with ``trace_id``, ``deviations``, ``failed``)."""
    by_id = {r.trace_id: r for r in results}
    missing = [tid for tid in bundle.log.ids if tid not in by_id]
    if missing:
        raise ValueError(f"no detection result for trace ids {missing[:5]}")
    return [score_trace(bundle.ground_truth[tid], by_id[tid].deviations, by_id[tid].failed, conforming_labeling)
            for tid in bundle.log.ids]


# --- descriptive statistics ----------------------------------------------------

@dataclass(frozen=True)
class DescriptiveRow:
    logs: int
    total: int
    conforming: int
    deviating: int
    patterns: Tuple[Tuple[str, int], ...]

    @property
    def n_deviations(self) -> int:
        return sum(n for _, n in self.patterns)

    @property
    def avg_deviations(self) -> Fraction:
        """Deviations per trace (all traces), exact."""
        return Fraction(self.n_deviations, self.total) if self.total else ZERO

    @property
    def avg_display(self) -> str:
        return _fmt(self.avg_deviations)

    def count(self, category: str) -> int:
        return dict(self.patterns)[category]

    def __add__(self, other: "DescriptiveRow") -> "DescriptiveRow":
        return DescriptiveRow(self.logs + other.logs, self.total + other.total,
                              self.conforming + other.conforming, self.deviating + other.deviating,
                              tuple((c, self.count(c) + other.count(c)) for c in PATTERN_CATEGORIES))

    def to_dict(self) -> dict:
        return {"logs": self.logs, "total": self.total, "conforming": self.conforming,
                "deviating": self.deviating, "avg_deviations": self.avg_display,
                **{c: n for c, n in self.patterns}}

    def to_text(self) -> str:
        head = ["logs", "total", "conforming", "deviating", "avg"] + list(PATTERN_CATEGORIES)
        vals = [self.logs, self.total, self.conforming, self.deviating, self.avg_display,
                *(n for _, n in self.patterns)]
        widths = [max(len(h), len(str(v))) + 2 for h, v in zip(head, vals)]
        return ("".join(h.rjust(w) for h, w in zip(head, widths)) + "\n"
                + "".join(str(v).rjust(w) for v, w in zip(vals, widths)) + "\n")


def descriptive_stats(bundles: Sequence[LogBundle]) -> DescriptiveRow:
    """Trace and pattern counts over ``bundles``, one log per bundle."""
    counts = Counter()
    total = deviating = 0
    for b in bundles:
        for tid in b.log.ids:
            total += 1
            gt = b.ground_truth[tid]
            deviating += bool(gt)
            counts.update(d.kind.category for d in gt)
    return DescriptiveRow(len(bundles), total, total - deviating, deviating,
                          tuple((c, counts[c]) for c in PATTERN_CATEGORIES))


# --- robustness and timing -------------------------------------------------------

@dataclass
class RobustnessReport:
    seeds: Tuple[int, ...]
    per_seed: Dict[int, MetricsReport]
    std: Dict[str, Dict[str, Optional[float]]]
    errors: Dict[int, str] = field(default_factory=dict)

    def to_text(self) -> str:
        lines = [f"{'category':<12}{'prec.':>8}{'rec.':>8}{'F1':>8}"]
        for c in CATEGORIES:
            vals = ["n/a" if self.std[c][m] is None else f"{self.std[c][m]:.2f}" for m in METRIC_NAMES]
            lines.append(f"{c:<12}" + "".join(f"{v:>8}" for v in vals))
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {"seeds": list(self.seeds), "std": self.std, "errors": {str(k): v for k, v in self.errors.items()},
                "per_seed": {str(s): r.to_dict() for s, r in self.per_seed.items()}}


def robustness_run(run: Callable[[int], MetricsReport], seeds: Sequence[int]) -> RobustnessReport:
    """Run ``run(seed)`` for every seed; population std of each averaged metric.

    A cell is ``None`` when the metric is undefined under some seed. Seeds
    whose run raises are recorded in ``errors`` and left out.
    """
    seeds = tuple(seeds)
    if len(seeds) < 2:
        raise ValueError("robustness needs at least two seeds")
    per_seed, errors = {}, {}
    for s in seeds:
        try:
            per_seed[s] = run(s)
        except Exception as exc:
            errors[s] = f"{type(exc).__name__}: {exc}"
    if len(per_seed) < 2:
        raise RuntimeError(f"fewer than two seeds completed: {errors}")
    std = {}
    for c in CATEGORIES:
        std[c] = {}
        for i, m in enumerate(METRIC_NAMES):
            vals = [r.average[c].as_tuple()[i] for r in per_seed.values()]
            std[c][m] = None if any(v is None for v in vals) else statistics.pstdev(float(v) for v in vals)
    return RobustnessReport(seeds, per_seed, std, errors)


def detector_run(detector, models, bundles: Mapping[str, LogBundle],
                 conforming_labeling: str = "mirrored") -> Callable[[int], MetricsReport]:
    """Seeded full pipeline for :func:`robustness_run`: clone, fit, predict, score."""
    from sklearn.base import clone

    def run(seed: int) -> MetricsReport:
        est = clone(detector).set_params(seed=seed).fit(models)
        counts, durations = {}, []
        for name, bundle in bundles.items():
            results = est.predict(bundle)
            durations.append(est.last_predict_seconds_)
            counts[name] = score_results(bundle, results, conforming_labeling)
        meta = {"seed": seed, "timing": {"kb_population": est.fit_seconds_, "inference": durations}}
        return aggregate_metrics(counts, meta)

    return run


def timing_report(run: Optional[Mapping]) -> Dict[str, object]:
    """Mean per-log inference time and KB population time from run metadata.

    ``run`` carries ``{"kb_population": seconds, "inference": [seconds per log]}``;
    anything else yields ``{"available": False}``.
    """
    if not run or "kb_population" not in run or "inference" not in run:
        return {"available": False}
    per_log = list(run["inference"])
    mean = sum(per_log) / len(per_log) if per_log else 0.0
    return {"kb_population": float(run["kb_population"]), "inference": mean}
