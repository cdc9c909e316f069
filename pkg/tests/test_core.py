from collections import Counter

import pytest
from hypothesis import given

from strategies import fragments, patterns
from tracerag.core import (
    EventLog,
    PatternKind,
    PrimitiveKind,
    ProcessModel,
    Trace,
    TraceError,
    format_pattern,
    format_patterns,
    normalize_deviation,
    pattern,
    pattern_mass,
    primitive_items,
    validate_pattern,
)

INS, SKP = PrimitiveKind.INSERTED, PrimitiveKind.SKIPPED


def test_trace_trims_labels_and_rejects_empty():
    assert Trace("t", (" a ", "b")).activities == ("a", "b")
    with pytest.raises(TraceError):
        Trace("t", ())
    with pytest.raises(TraceError):
        Trace("t", ("a", "   "))


def test_labels_compare_case_sensitively():
    assert Trace("t", ("Approve",)) != Trace("t", ("approve",))


def test_log_allows_repeated_sequences_but_not_ids():
    log = EventLog("l", (Trace("1", ("a",)), Trace("2", ("a",))))
    assert len(log) == 2
    with pytest.raises(TraceError, match="duplicate trace id"):
        EventLog("l", (Trace("1", ("a",)), Trace("1", ("b",))))


def test_model_alphabet_covers_sequences_and_extras():
    m = ProcessModel("m", (("a", "b"), ("a", "c")), frozenset({"z"}))
    assert m.alphabet == {"a", "b", "c", "z"}
    assert ("a", "c") in m and ("c", "a") not in m
    with pytest.raises(TraceError):
        ProcessModel("m", (("a",), ("a",)))
    with pytest.raises(TraceError):
        ProcessModel("m", ())


def test_position_is_not_part_of_equality():
    assert pattern("Skip", ["a"], position=3) == pattern("Skip", ["a"])


@pytest.mark.parametrize("d, expected", [
    (pattern("Insert", ["a"]), Counter({(INS, "a"): 1})),
    (pattern("Replace", ["a"], ["b"]), Counter({(SKP, "a"): 1, (INS, "b"): 1})),
    (pattern("Repeat", ["a", "b"]), Counter({(INS, "a"): 1, (INS, "b"): 1})),
    (pattern("Skip", ["a", "a"]), Counter({(SKP, "a"): 2})),
    (pattern("Swap", ["a"], ["b"]), Counter({(SKP, "a"): 1, (INS, "a"): 1, (SKP, "b"): 1, (INS, "b"): 1})),
])
def test_normalize_deviation_examples(d, expected):
    assert normalize_deviation(d) == expected


@given(patterns())
def test_normalized_mass_matches_fragment_sizes(d):
    fa, fb = len(d.fragment_a), len(d.fragment_b or ())
    expected = {PatternKind.REPLACE: fa + fb, PatternKind.SWAP: 2 * (fa + fb)}.get(d.kind, fa)
    assert pattern_mass(d) == expected


@given(patterns())
def test_normalization_preserves_label_occurrences(d):
    per_label = Counter()
    for (_, act), n in normalize_deviation(d).items():
        per_label[act] += n
    occurrences = Counter(d.fragment_a + (d.fragment_b or ()))
    if d.kind is PatternKind.SWAP:
        occurrences = occurrences + occurrences
    assert per_label == occurrences


@given(patterns())
def test_primitive_items_mirror_the_counter(d):
    items = primitive_items(d)
    assert all(i.multiplicity >= 1 for i in items)
    assert Counter({(i.kind, i.activity): i.multiplicity for i in items}) == normalize_deviation(d)


@pytest.mark.parametrize("d, message", [
    (pattern("Swap", ["a"], ["a"]), "swap fragments identical"),
    (pattern("Replace", ["a"], []), "fragment_b empty"),
    (pattern("Replace", ["a"], ["a"]), "replace fragments identical"),
    (pattern("Insert", []), "fragment_a empty"),
    (pattern("Skip", ["a"], ["b"]), "fragment_b not allowed for Skip"),
    (pattern("Skip", ["a"], position=-1), "position negative"),
])
def test_validate_pattern_reports_first_violation(d, message):
    assert validate_pattern(d) == message


def test_validate_pattern_accepts_well_formed():
    assert validate_pattern(pattern("Insert", ["a", "b", "c"])) is None
    assert validate_pattern(pattern("Skip", ["a"], position=4), trace_length=3) == "position out of trace bounds"


@given(fragments)
def test_valid_single_fragment_patterns(f):
    for kind in ("Insert", "Skip", "Repeat"):
        assert validate_pattern(pattern(kind, f)) is None


def test_surface_syntax():
    assert format_pattern(pattern("Swap", ["Approve"], ["Ship"])) == "Swap(['Approve'], ['Ship'])"
    assert format_pattern(pattern("Insert", ["it's", "a\\b"])) == r"Insert(['it\'s', 'a\\b'])"
    assert format_patterns([]) == "No Deviation."
    assert format_patterns([pattern("Skip", ["a"]), pattern("Repeat", ["b"])]) == "Skip(['a'])\nRepeat(['b'])"
    assert str(pattern("Skip", ["a"])) == "Skip(['a'])"
