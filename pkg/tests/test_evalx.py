import json
import math
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import optimal_credit, primitives
from strategies import patterns
from tracerag.backends import ScriptedBackend
from tracerag.core import PatternKind, PrimitiveKind, normalize_deviation, pattern, pattern_mass
from tracerag.detect import RagDeviationDetector
from tracerag.evalx import (
    CATEGORIES,
    Cell,
    Metrics,
    ScoreCounts,
    aggregate_metrics,
    descriptive_stats,
    detector_run,
    matched_mass,
    robustness_run,
    round_half_up,
    score_results,
    score_trace,
    timing_report,
)
from tracerag.fixtures import load_fixture
from tracerag.loggen import InjectionConfig, synthesize_bundle
from tracerag.model_io import read_bundle
from tracerag.synthetic import random_model

F = Fraction
small = st.lists(st.sampled_from("abcde"), min_size=1, max_size=2).map(tuple)
small_lists = st.lists(patterns(small), max_size=4)


def as_primitives(ds):
    """Each pattern rewritten as its insert/skip primitive patterns."""
    out = []
    for d in ds:
        for (kind, act), n in sorted(normalize_deviation(d).items(), key=lambda kv: (kv[0][0].value, kv[0][1])):
            k = "Insert" if kind is PrimitiveKind.INSERTED else "Skip"
            out += [pattern(k, [act])] * n
    return out


def test_partial_credit_example():
    c = score_trace([pattern("Skip", ["A", "B", "C"])], [pattern("Skip", ["A", "B"])])
    assert c["skip"] == Cell(F(2, 3), F(0), F(1, 3))
    assert c["conforming"] == Cell()


def test_cross_kind_credit_goes_through_primitives():
    c = score_trace([pattern("Replace", ["a"], ["b"])], [pattern("Skip", ["a"]), pattern("Insert", ["b"])])
    assert c["replace"] == Cell(F(1), F(0), F(0))
    assert c["skip"] == Cell() and c["insert"] == Cell()


def test_false_positive_share():
    c = score_trace([pattern("Insert", ["a"])], [pattern("Insert", ["a", "b"])])
    assert c["insert"] == Cell(F(1), F(1, 2), F(0))


def test_conforming_class_labelings():
    d = [pattern("Skip", ["a"])]
    assert score_trace([], [])["conforming"] == Cell(tp=F(1))
    assert score_trace(d, [])["conforming"] == Cell(fn=F(1))
    assert score_trace([], d)["conforming"] == Cell(fp=F(1))
    assert score_trace(d, [], conforming_labeling="conventional")["conforming"] == Cell(fp=F(1))
    assert score_trace([], d, conforming_labeling="conventional")["conforming"] == Cell(fn=F(1))
    with pytest.raises(ValueError):
        score_trace([], [], conforming_labeling="other")


def test_failed_reply_counts_as_missed():
    c = score_trace([pattern("Skip", ["a"])], [pattern("Skip", ["a"])], failed=True)
    assert c["skip"] == Cell(fn=F(1)) and c.failures == 1
    assert score_trace([], [], failed=True)["conforming"] == Cell()


@given(small_lists, small_lists)
def test_every_gt_pattern_adds_one(gt, pred):
    c = score_trace(gt, pred)
    for cat in CATEGORIES[:-1]:
        n = sum(1 for g in gt if g.kind.category == cat)
        assert c[cat].tp + c[cat].fn == n
        assert c[cat].tp >= 0 and c[cat].fn >= 0 and c[cat].fp >= 0


@given(small_lists)
def test_identity_scores_perfectly(gt):
    c = score_trace(gt, gt)
    assert all(c[cat].fp == 0 and c[cat].fn == 0 for cat in CATEGORIES)


@given(small_lists, small_lists, patterns(small))
def test_extra_prediction_never_lowers_tp(gt, pred, extra):
    before = score_trace(gt, pred)
    after = score_trace(gt, pred + [extra])
    assert sum(after[c].tp for c in CATEGORIES[:-1]) >= sum(before[c].tp for c in CATEGORIES[:-1])


@settings(max_examples=300)
@given(small_lists, small_lists)
def test_greedy_matches_optimal_assignment(gt, pred):
    assert matched_mass(gt, pred) == optimal_credit(gt, pred)


@given(small_lists)
def test_primitive_rendering_gets_full_credit(gt):
    c = score_trace(gt, as_primitives(gt))
    assert all(c[cat].fn == 0 for cat in CATEGORIES[:-1])
    assert sum(c[cat].tp for cat in CATEGORIES[:-1]) == len(gt)


@given(patterns(small))
def test_oracle_primitives_agree(d):
    assert primitives(d) == normalize_deviation(d)
    assert sum(primitives(d).values()) == pattern_mass(d)


@given(small_lists, small_lists)
def test_f1_symmetric_under_role_swap(gt, pred):
    a = ScoreCounts.total([score_trace(gt, pred)])
    b = ScoreCounts.total([score_trace(pred, gt)])
    ta = sum((a[c] for c in CATEGORIES[:-1]), Cell())
    tb = sum((b[c] for c in CATEGORIES[:-1]), Cell())
    # totals over all kinds: swapping roles swaps fp and fn only when masses align per pattern
    if all(pattern_mass(d) == 1 for d in gt + pred):
        assert ta.swapped() == tb
        assert Metrics.of(ta).f1 == Metrics.of(tb).f1


def test_metrics_edge_cases():
    assert Metrics.of(Cell()).as_tuple() == (None, None, None)
    assert Metrics.of(Cell(fp=F(1))).as_tuple() == (F(0), None, None)
    assert Metrics.of(Cell(fp=F(1), fn=F(1))).f1 == 0
    m = Metrics.of(Cell(F(2), F(1), F(1)))
    assert m.as_tuple() == (F(2, 3), F(2, 3), F(2, 3))


def test_round_half_up():
    assert str(round_half_up(F(1, 8), 2)) == "0.13"
    assert str(round_half_up(F(30, 58), 2)) == "0.52"
    assert str(round_half_up(0.125, 2)) == "0.13"
    assert str(round_half_up(F(26027, 39600), 2)) == "0.66"


def test_macro_average_skips_undefined():
    a = [score_trace([pattern("Skip", ["a"])], [pattern("Skip", ["a"])])]
    b = [score_trace([pattern("Skip", ["a"])], [])]
    report = aggregate_metrics({"x": a, "y": b})
    assert report.rows["x"]["skip"].recall == 1 and report.rows["y"]["skip"].recall == 0
    assert report.average["skip"].recall == F(1, 2)
    # precision undefined for y (no skip predicted) -> average over x only
    assert report.average["skip"].precision == 1
    assert report.average["insert"].as_tuple() == (None, None, None)
    doc = json.loads(report.to_json())
    assert doc["average"]["skip"]["recall"] == 0.5
    assert "skip" in report.to_text() and "failures" in report.to_text("x")
    assert report.to_csv().splitlines()[0] == "log,category,precision,recall,f1,tp,fp,fn"
    flat = aggregate_metrics(a)
    assert list(flat.rows) == ["log"]


def test_descriptive_stats_example_and_additivity():
    m = random_model("m", 6, seed=1)
    b1 = synthesize_bundle(m, InjectionConfig(seed=1))
    b2 = synthesize_bundle(m, InjectionConfig(seed=2, deviating_share=0.0))
    r1, r2 = descriptive_stats([b1]), descriptive_stats([b2])
    assert r2.deviating == 0 and r2.n_deviations == 0 and r2.avg_display == "0.00"
    assert descriptive_stats([b1, b2]) == r1 + r2
    assert r1.total == r1.conforming + r1.deviating
    assert r1.n_deviations == sum(len(v) for v in b1.ground_truth.values())


def test_score_results_requires_every_trace():
    m = random_model("m", 5, seed=2)
    b = synthesize_bundle(m, InjectionConfig(seed=1, min_traces=5))
    with pytest.raises(ValueError, match="no detection result"):
        score_results(b, [])


@pytest.fixture(scope="module")
def p2p():
    fx = load_fixture("p2p-shape")
    return fx, read_bundle(fx.path("bundle.json"))


def test_robustness_oracle_has_zero_spread(p2p):
    _, bundle = p2p
    run = detector_run(RagDeviationDetector(backend="oracle", k=0), None, {"p2p": bundle})
    rep = robustness_run(run, [1, 2, 3])
    for cat in CATEGORIES:
        for v in rep.std[cat].values():
            assert v == 0.0
    assert rep.errors == {}


def test_robustness_single_flip(p2p):
    fx, bundle = p2p
    backend = ScriptedBackend.from_file(fx.path("flip_replies.json"))
    run = detector_run(RagDeviationDetector(backend=backend, k=0), None, {"p2p": bundle})
    rep = robustness_run(run, [1, 2, 3])
    # seed 2 misses one Skip (of 5) and one Repeat (of 12); conforming gains one fn (of 41)
    spread = math.sqrt(2) / 3
    expected = {"skip": F(4, 5), "repeat": F(11, 12), "conforming": F(40, 41)}
    for cat in CATEGORIES:
        recall = expected.get(cat, F(1))
        f1 = 2 * recall / (1 + recall)
        assert rep.std[cat]["precision"] == 0.0
        assert rep.std[cat]["recall"] == pytest.approx(float(1 - recall) * spread, abs=1e-12)
        assert rep.std[cat]["f1"] == pytest.approx(float(1 - f1) * spread, abs=1e-12)
    assert "0.09" in rep.to_text()


def test_robustness_needs_two_seeds():
    with pytest.raises(ValueError):
        robustness_run(lambda s: None, [1])


def test_robustness_records_failing_seed(p2p):
    _, bundle = p2p
    inner = detector_run(RagDeviationDetector(backend="oracle", k=0), None, {"p2p": bundle})

    def run(seed):
        if seed == 2:
            raise RuntimeError("boom")
        return inner(seed)

    rep = robustness_run(run, [1, 2, 3])
    assert rep.errors == {2: "RuntimeError: boom"} and sorted(rep.per_seed) == [1, 3]


def test_timing_report():
    assert timing_report(None) == {"available": False}
    assert timing_report({"kb_population": 2, "inference": [1.0, 3.0]}) == {"kb_population": 2.0, "inference": 2.0}


def test_swap_kind_category():
    assert PatternKind.SWAP.category == "swap"
