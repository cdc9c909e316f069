import itertools
import json
import random
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tracerag.core import EventLog, Trace, pattern
from tracerag.model_io import (
    EmptyLanguageError,
    IntegrityError,
    LogBundle,
    LogFormatError,
    ModelParseError,
    PlayoutBudgetError,
    SchemaError,
    WorkflowNet,
    bundle_from_dict,
    distinct_alphabets,
    dumps_bundle,
    has_min_activities,
    load_model,
    load_models,
    parse_sequence_model,
    parse_workflow_net,
    playout_net,
    read_bundle,
    read_event_log,
    read_log_any,
    write_bundle,
    write_jsonl,
    write_xes,
)


# --- sequence models -------------------------------------------------------------

def test_parse_sequence_model():
    m = parse_sequence_model({"id": "m1", "sequences": [["a", "b"], ["a", "c"]]})
    assert m.alphabet == {"a", "b", "c"} and len(m) == 2
    m = parse_sequence_model('{"id": "m1", "alphabet": ["z"], "sequences": [["a"]]}')
    assert m.alphabet == {"a", "z"}


def test_sequence_model_errors():
    with pytest.raises(SchemaError, match="empty sequence set"):
        parse_sequence_model({"id": "m2", "sequences": []})
    with pytest.raises(SchemaError, match="duplicate sequence"):
        parse_sequence_model({"id": "m3", "sequences": [["a", "b"], ["a", "b"]]})
    with pytest.raises(ModelParseError, match="line 1"):
        parse_sequence_model('{"id": "m4", "sequences": [[')
    with pytest.raises(SchemaError):
        parse_sequence_model({"sequences": [["a"]]})


def test_model_filters():
    small = parse_sequence_model({"id": "s", "sequences": [["a", "b"]]})
    big = parse_sequence_model({"id": "b", "sequences": [["a", "b", "c", "d", "e"]]})
    twin = parse_sequence_model({"id": "t", "sequences": [["e", "d", "c", "b", "a"]]})
    assert not has_min_activities(small) and has_min_activities(big)
    assert [m.id for m in distinct_alphabets([big, small, twin])] == ["b", "s"]


# --- workflow nets -----------------------------------------------------------------

def net(id_, transitions, arcs, source="i", sink="o"):
    places = {x for a in arcs for x in a if x not in transitions}
    return WorkflowNet(id_, frozenset(places), transitions, frozenset(map(tuple, arcs)), source, sink)


def chain(labels):
    trans = {f"t{i}": a for i, a in enumerate(labels)}
    places = ["i"] + [f"p{i}" for i in range(1, len(labels))] + ["o"]
    arcs = []
    for i in range(len(labels)):
        arcs += [(places[i], f"t{i}"), (f"t{i}", places[i + 1])]
    return net("chain", trans, arcs)


def test_playout_sequential():
    assert playout_net(chain(["a", "b", "c"])).sequences == (("a", "b", "c"),)


def test_playout_xor():
    n = net("x", {"ta": "a", "tb": "b", "tc": "c", "td": "d"},
            [("i", "ta"), ("ta", "p1"), ("p1", "tb"), ("p1", "tc"), ("tb", "p2"), ("tc", "p2"),
             ("p2", "td"), ("td", "o")])
    assert set(playout_net(n).sequences) == {("a", "b", "d"), ("a", "c", "d")}


def test_playout_loop_respects_bound():
    n = net("l", {"ta": "a", "tb": "b", "back": None, "exit": None},
            [("i", "ta"), ("ta", "p1"), ("p1", "tb"), ("tb", "p2"), ("p2", "back"), ("back", "p1"),
             ("p2", "exit"), ("exit", "o")])
    assert set(playout_net(n).sequences) == {("a", "b"), ("a", "b", "b")}
    assert set(playout_net(n, loop_bound=3).sequences) == {("a", "b"), ("a", "b", "b"), ("a", "b", "b", "b")}


def test_playout_truncation_flag():
    n = net("x", {"ta": "a", "tb": "b", "tc": "c"},
            [("i", "ta"), ("i", "tb"), ("i", "tc"), ("ta", "o"), ("tb", "o"), ("tc", "o")])
    full = playout_net(n)
    assert len(full) == 3 and not full.truncated
    cut = playout_net(n, max_sequences=2)
    assert len(cut) == 2 and cut.truncated


def test_playout_errors():
    # tb joins p1 and p2, but the single source token only ever reaches one of them
    stuck = net("stuck", {"ta": "a", "tc": "c", "tb": "b"},
                [("i", "ta"), ("ta", "p1"), ("i", "tc"), ("tc", "p2"), ("p1", "tb"), ("p2", "tb"), ("tb", "o")])
    with pytest.raises(EmptyLanguageError):
        playout_net(stuck)
    with pytest.raises(PlayoutBudgetError, match="budget of 3"):
        playout_net(chain(list("abcdef")), state_budget=3)


def test_net_structure_checks():
    with pytest.raises(SchemaError, match="place<->transition"):
        net("bad", {"ta": "a", "tb": "b"}, [("i", "ta"), ("ta", "tb"), ("tb", "o")])
    with pytest.raises(SchemaError, match="exactly one source"):
        net("two", {"ta": "a"}, [("i", "ta"), ("j", "ta"), ("ta", "o")])
    with pytest.raises(SchemaError, match="not on a source-sink path"):
        WorkflowNet("s", frozenset({"i", "o", "p"}), {"ta": "a", "tb": "b"},
                    frozenset({("i", "ta"), ("ta", "o"), ("p", "tb"), ("tb", "p")}), "i", "o")


# A small process-tree-to-net builder. Two independent routes check playout:
# the tree's language computed directly (loop-free trees) and a naive
# recursive firing-sequence enumerator without any state memoization.

class NetBuilder:
    def __init__(self):
        self.trans, self.arcs, self.n = {}, [], 0

    def place(self):
        self.n += 1
        return f"p{self.n}"

    def transition(self, label, src, dst):
        self.n += 1
        tid = f"t{self.n}"
        self.trans[tid] = label
        for s in src:
            self.arcs.append((s, tid))
        for d in dst:
            self.arcs.append((tid, d))

    def build(self, node, a, b):
        op = node[0]
        if op == "act":
            self.transition(node[1], [a], [b])
        elif op == "seq":
            cur = a
            for i, child in enumerate(node[1:]):
                nxt = b if i == len(node) - 2 else self.place()
                self.build(child, cur, nxt)
                cur = nxt
        elif op == "xor":
            for child in node[1:]:
                self.build(child, a, b)
        elif op == "and":
            ins = [self.place() for _ in node[1:]]
            outs = [self.place() for _ in node[1:]]
            self.transition(None, [a], ins)
            for child, i, o in zip(node[1:], ins, outs):
                self.build(child, i, o)
            self.transition(None, outs, [b])
        elif op == "loop":
            mid = self.place()
            self.build(node[1], a, mid)
            self.build(node[2], mid, a)
            self.transition(None, [mid], [b])

    def net(self, tree):
        start, end = self.place(), self.place()
        self.transition(None, ["i"], [start])
        self.build(tree, start, end)
        self.transition(None, [end], ["o"])
        return net("tree", self.trans, self.arcs)


def tree_language(node):
    op = node[0]
    if op == "act":
        return {(node[1],)}
    langs = [tree_language(c) for c in node[1:]]
    if op == "xor":
        return set().union(*langs)
    out = {()}
    for lang in langs:
        if op == "seq":
            out = {u + v for u in out for v in lang}
        else:
            nxt = set()
            for u in out:
                for v in lang:
                    for slots in itertools.combinations(range(len(u) + len(v)), len(u)):
                        it_u, it_v, s = iter(u), iter(v), set(slots)
                        nxt.add(tuple(next(it_u) if k in s else next(it_v) for k in range(len(u) + len(v))))
            out = nxt
    return out


def naive_playout(n: WorkflowNet, bound: int):
    pre, post = {t: Counter() for t in n.transitions}, {t: Counter() for t in n.transitions}
    for a, b in n.arcs:
        (post[a] if a in n.transitions else pre[b])[b if a in n.transitions else a] += 1
    out = set()

    def run(marking, fired, labels):
        if +marking == Counter({n.sink: 1}):
            if labels:
                out.add(labels)
            return
        for t in n.transitions:
            if fired[t] < bound and all(marking[p] >= k for p, k in pre[t].items()):
                m2 = marking - pre[t] + post[t]
                f2 = fired.copy()
                f2[t] += 1
                lab = n.transitions[t]
                run(m2, f2, labels + ((lab,) if lab else ()))

    run(Counter({n.source: 1}), Counter(), ())
    return out


def random_tree(rng, labels, loops=True, depth=0):
    if len(labels) == 1:
        return ("act", labels[0])
    ops = ["seq", "xor", "and"] + (["loop"] if loops else [])
    op = rng.choice(ops) if depth < 3 else "seq"
    cut = rng.randint(1, len(labels) - 1)
    left = random_tree(rng, labels[:cut], loops, depth + 1)
    right = random_tree(rng, labels[cut:], loops, depth + 1)
    return (op, left, right)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(2, 6))
def test_playout_matches_tree_language_without_loops(seed, size):
    tree = random_tree(random.Random(seed), list("abcdef")[:size], loops=False)
    lang = tree_language(tree)
    net_ = NetBuilder().net(tree)
    assert set(playout_net(net_).sequences) == lang
    assert set(playout_net(net_, loop_bound=1).sequences) == lang


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(2, 5))
def test_playout_matches_naive_enumeration(seed, size):
    tree = random_tree(random.Random(seed), list("abcde")[:size])
    net_ = NetBuilder().net(tree)
    model = playout_net(net_)
    assert set(model.sequences) == naive_playout(net_, 2)
    assert len(set(model.sequences)) == len(model.sequences)


def test_load_models_detects_nets(tmp_path):
    (tmp_path / "a.json").write_text(json.dumps({"id": "seq", "sequences": [["x", "y"]]}))
    n = {"id": "net", "places": ["i", "o"], "transitions": [{"id": "t", "label": "z"}],
         "arcs": [["i", "t"], ["t", "o"]], "source": "i", "sink": "o"}
    (tmp_path / "b.json").write_text(json.dumps(n))
    models = load_models(tmp_path)
    assert [m.id for m in models] == ["seq", "net"]
    assert load_model(tmp_path / "b.json").sequences == (("z",),)
    assert parse_workflow_net(json.dumps(n)).transitions == {"t": "z"}


# --- event logs -----------------------------------------------------------------------

XES_HEAD = '<?xml version="1.0" encoding="UTF-8"?>\n<log xmlns="http://www.xes-standard.org/">'


def test_read_jsonl(tmp_path):
    p = tmp_path / "l.jsonl"
    p.write_text('{"id":"t1","activities":["a","b"]}\n\n{"id":"t2","activities":["c"]}\n')
    log = read_event_log(p)
    assert log.traces == (Trace("t1", ("a", "b")), Trace("t2", ("c",)))
    p.write_text('{"id":"t1","activities":[]}\n')
    with pytest.raises(LogFormatError):
        read_event_log(p)
    p.write_text('{"id": \n')
    with pytest.raises(ModelParseError):
        read_event_log(p)


def test_read_xes(tmp_path):
    p = tmp_path / "l.xes"
    p.write_text(XES_HEAD + """
      <trace><string key="concept:name" value="case1"/>
        <event><string key="concept:name" value="Create PO Item"/><date key="time:timestamp" value="2019-01-01T00:00:00"/></event>
        <event><string key="concept:name" value="Record Goods Receipt"/></event>
      </trace>
      <trace><event><string key="concept:name" value="Create PO Item"/></event></trace>
    </log>""")
    log = read_event_log(p)
    assert log.traces[0] == Trace("case1", ("Create PO Item", "Record Goods Receipt"))
    assert log.traces[1].id == "t1"


def test_xes_errors(tmp_path):
    p = tmp_path / "bad.xes"
    p.write_text(XES_HEAD + """<trace>
        <event><string key="concept:name" value="a"/></event>
        <event><string key="org:resource" value="x"/></event></trace></log>""")
    with pytest.raises(LogFormatError, match=r"\(trace 0, event 1\)"):
        read_event_log(p)
    p.write_text(XES_HEAD + "<trace></trace></log>")
    with pytest.raises(LogFormatError, match="empty trace"):
        read_event_log(p)
    p.write_text(XES_HEAD + "<trace>")
    with pytest.raises(ModelParseError):
        read_event_log(p)


ids = st.text(st.sampled_from("abc123/-"), min_size=1, max_size=6)
acts = st.lists(st.text(st.sampled_from("abc ,<&\"'é"), min_size=1, max_size=5).map(str.strip).filter(bool),
                min_size=1, max_size=5)


@settings(max_examples=40, deadline=None)
@given(st.dictionaries(ids, acts, min_size=1, max_size=5))
def test_log_round_trips(tmp_path_factory, traces):
    log = EventLog("rt", tuple(Trace(k, tuple(v)) for k, v in traces.items()))
    d = tmp_path_factory.mktemp("rt")
    write_jsonl(log, d / "rt.jsonl")
    write_xes(log, d / "rt.xes")
    for name in ("rt.jsonl", "rt.xes"):
        back = read_event_log(d / name)
        assert [(t.id, t.activities) for t in back.traces] == [(t.id, t.activities) for t in log.traces]


# --- bundles ----------------------------------------------------------------------------

def small_bundle():
    log = EventLog("b", (Trace("t1", ("a", "c")), Trace("t2", ("a", "b", "c"))))
    return LogBundle(log, {"t1": [pattern("Skip", ["b"], position=1)]})


def test_bundle_fills_conforming_traces():
    assert small_bundle().ground_truth["t2"] == ()
    assert small_bundle().deviating_ids() == ["t1"]


def test_bundle_round_trip_and_determinism(tmp_path):
    b = small_bundle()
    write_bundle(b, tmp_path / "x.json")
    write_bundle(b, tmp_path / "y.json")
    assert (tmp_path / "x.json").read_bytes() == (tmp_path / "y.json").read_bytes()
    back = read_bundle(tmp_path / "x.json")
    assert back == b
    assert back.ground_truth["t1"][0].position == 1
    log, bundle = read_log_any(tmp_path / "x.json")
    assert bundle == b and log == b.log


def test_bundle_integrity_errors():
    doc = json.loads(dumps_bundle(small_bundle()))
    doc["ground_truth"]["ghost"] = []
    with pytest.raises(IntegrityError):
        bundle_from_dict(doc)
    doc = json.loads(dumps_bundle(small_bundle()))
    del doc["ground_truth"]["t2"]
    with pytest.raises(IntegrityError):
        bundle_from_dict(doc)
    with pytest.raises(IntegrityError):
        LogBundle(small_bundle().log, {"ghost": []})
    doc = json.loads(dumps_bundle(small_bundle()))
    doc["ground_truth"]["t1"][0]["kind"] = "Teleport"
    with pytest.raises(SchemaError):
        bundle_from_dict(doc)
