from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from strategies import plain_labels
from tracerag.core import EventLog, Trace, pattern
from tracerag.backends import ScriptedBackend
from tracerag.detect import detect_trace
from tracerag.embed import HashedNgramEmbedder
from tracerag.fixtures import load_fixture
from tracerag.kb import KbEntry
from tracerag.model_io import read_bundle, read_xes
from tracerag.promptgen import (
    PromptTemplate,
    TemplateError,
    default_template,
    describe_pattern,
    extract_log_context,
    render_examples,
    render_prompt,
)


def log_of(*seqs):
    return EventLog("l", tuple(Trace(str(i), tuple(s)) for i, s in enumerate(seqs)))


def test_context_counts_and_order():
    log = log_of("ab", "ab", "ac", "ac", "ad", "ab")
    ctx = extract_log_context(log, n_traces=2, threshold=0.3)
    assert ctx.frequent_traces == ((("a", "b"), 3), (("a", "c"), 2))
    assert ctx.frequent_activities == (("a", Fraction(1)), ("b", Fraction(1, 2)), ("c", Fraction(1, 3)))


def test_threshold_is_inclusive_at_the_boundary():
    # 10 traces, "x" in exactly one of them: support 1/10 meets a 0.10 cut-off
    log = log_of(*(["ay"] * 9 + ["ax"]))
    ctx = extract_log_context(log)
    assert ("x", Fraction(1, 10)) in ctx.frequent_activities
    assert "x" not in dict(extract_log_context(log, threshold=0.11).frequent_activities)


def test_activity_counted_once_per_trace():
    ctx = extract_log_context(log_of("aab", "b"), threshold=0.0)
    assert dict(ctx.frequent_activities) == {"a": Fraction(1, 2), "b": Fraction(1)}


def test_empty_context():
    ctx = extract_log_context(log_of("ab"), n_traces=0, threshold=1.5)
    assert ctx.is_empty() and ctx.references == []
    with pytest.raises(ValueError):
        extract_log_context(EventLog("l", ()))
    with pytest.raises(ValueError):
        extract_log_context(log_of("a"), n_traces=-1)


def test_variant_ties_break_by_first_occurrence():
    ctx = extract_log_context(log_of("b", "a", "a", "b", "c"), n_traces=3)
    assert ctx.references == [("b",), ("a",), ("c",)]


def test_describe_pattern():
    assert describe_pattern(pattern("Skip", ["Receive Goods"])) == "Skipped: 'Receive Goods'"
    assert describe_pattern(pattern("Replace", ["a"], ["b", "c"])) == "Replaced: 'a' by 'b', 'c'"
    assert describe_pattern(pattern("Swap", ["a"], ["b"])) == "Swapped: 'a' and 'b'"


def test_template_errors():
    with pytest.raises(TemplateError, match="lacks placeholders"):
        PromptTemplate.parse("[[a]]\n{{activity_sequence}}\n")
    t = PromptTemplate.parse("[[a]]\n{{nope}}\n", required=())
    with pytest.raises(TemplateError, match="no value"):
        t.fill({})


def test_metadata_lines_are_not_rendered():
    t = default_template()
    assert t.name == "detect_v1"
    assert [n for n, _ in t.sections] == ["task_description", "activity_sequence", "frequent_traces",
                                          "frequent_activities", "examples"]
    p = render_prompt(Trace("t", ("a", "b")))
    assert "template: detect-v1" not in p.rendered and "{{" not in p.rendered


def test_zero_shot_prompt_has_no_context_or_examples():
    p = render_prompt(Trace("t", ("a", "b")))
    assert p.log_context == "" and p.retrieved_examples == ""
    assert p.activity_sequence.endswith("a, b")
    assert p.rendered == p.task_description + "\n\n" + p.activity_sequence + "\n"


def kb_entry(acts, devs):
    e = HashedNgramEmbedder(16)
    return KbEntry(Trace("k", acts), tuple(devs), "m", e.embed(", ".join(acts)))


def test_examples_block():
    text = render_examples([(kb_entry(("a", "c"), [pattern("Skip", ["Receive Goods"])]), 0.875),
                            (kb_entry(("a", "b"), []), 0.5)])
    assert text == ("Example 1 (similarity 0.88):\nSequence: a, c\nKnown deviations:\n"
                    "- Skipped: 'Receive Goods' => Skip(['Receive Goods'])\n\n"
                    "Example 2 (similarity 0.50):\nSequence: a, b\nKnown deviations: No Deviation.")


def test_golden_zero_shot():
    fx = load_fixture("p2p-shape")
    bundle = read_bundle(fx.path("bundle.json"))
    trace = next(t for t in bundle.log.traces if t.id == fx.manifest["golden_trace"])
    golden = fx.path("golden/zero_shot.txt").read_text(encoding="utf-8")
    assert detect_trace(trace, None, None, ScriptedBackend(), k=0).prompt == golden
    assert render_prompt(trace).rendered == golden


def test_golden_context_only():
    fx = load_fixture("bpic19-context")
    log = read_xes(fx.path("log.xes"))
    trace = next(t for t in log.traces if t.id == fx.manifest["golden_trace"])
    golden = fx.path("golden/context_only.txt").read_text(encoding="utf-8")
    assert render_prompt(trace, extract_log_context(log)).rendered == golden


@settings(max_examples=40, deadline=None)
@given(st.lists(st.lists(plain_labels, min_size=1, max_size=4), min_size=1, max_size=8),
       st.integers(0, 4))
def test_more_context_never_shortens_the_prompt(seqs, n):
    log = log_of(*seqs)
    trace = log.traces[0]
    shorter = render_prompt(trace, extract_log_context(log, n_traces=n)).rendered
    longer = render_prompt(trace, extract_log_context(log, n_traces=n + 1)).rendered
    assert len(longer) >= len(shorter)
    assert render_prompt(trace, extract_log_context(log, n_traces=n)).rendered == shorter
