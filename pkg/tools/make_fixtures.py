"""Regenerate the packaged fixtures under src/tracerag/fixtures/data/.

Usage: python3 tools/make_fixtures.py

Output is deterministic; rerunning must leave the tree unchanged.
"""
from __future__ import annotations

import hashlib
import json
import random
import shutil
from pathlib import Path

from tracerag.core import EventLog, PatternKind, Trace, format_patterns
from tracerag.detect import detect_trace
from tracerag.backends import ScriptedBackend
from tracerag.evalx import descriptive_stats
from tracerag.loggen import InjectionConfig, _draw_candidate, apply_pattern, is_valid_deviation
from tracerag.model_io import LogBundle, model_to_document, parse_sequence_model, write_bundle, write_xes
from tracerag.promptgen import extract_log_context

DATA = Path(__file__).resolve().parents[1] / "src" / "tracerag" / "fixtures" / "data"

# --- p2p-shape ---------------------------------------------------------------

P2P_CORE = ["Create Purchase Requisition", "Approve Purchase Requisition", "Create Purchase Order",
            "Approve Purchase Order", "Send Purchase Order"]
P2P_TAILS = [
    ["Receive Goods", "Receive Invoice", "Check Invoice", "Pay Invoice"],
    ["Receive Invoice", "Receive Goods", "Check Invoice", "Pay Invoice"],
    ["Receive Goods", "Inspect Goods", "Receive Invoice", "Check Invoice", "Pay Invoice"],
]
P2P_KIND_COUNTS = {PatternKind.INSERT: 6, PatternKind.SKIP: 5, PatternKind.REPEAT: 12,
                   PatternKind.REPLACE: 3, PatternKind.SWAP: 4}
P2P_PER_TRACE = [1] * 8 + [2] * 8 + [3] * 2   # 18 deviating traces, 30 patterns
P2P_FOREIGN = ["Change Price", "Cancel Purchase Order", "Update Vendor Master Data"]


def p2p_model():
    seqs = [P2P_CORE + tail for tail in P2P_TAILS]
    seqs.append([a for a in P2P_CORE if a != "Approve Purchase Order"] + P2P_TAILS[0])
    return parse_sequence_model({"id": "p2p", "sequences": seqs})


def p2p_bundle():
    rng = random.Random(20240558)
    model = p2p_model()
    alphabet = sorted(model.alphabet | set(P2P_FOREIGN))
    cfg = InjectionConfig(fragment_len_min=1, fragment_len_max=2)
    kinds = [k for k, n in P2P_KIND_COUNTS.items() for _ in range(n)]
    rng.shuffle(kinds)
    traces, gt = [], {}
    n_trace = 0
    for i in range(40):
        n_trace += 1
        traces.append(Trace(f"p2p/t{n_trace:02d}", tuple(rng.choice(model.sequences))))
    cursor = 0
    for per in P2P_PER_TRACE:
        n_trace += 1
        tid = f"p2p/t{n_trace:02d}"
        seq, accepted = tuple(rng.choice(model.sequences)), []
        for kind in kinds[cursor:cursor + per]:
            for _ in range(1000):
                cand = _draw_candidate(rng, seq, kind, cfg, alphabet)
                if cand is None:
                    continue
                new = apply_pattern(Trace(tid, seq), cand).activities
                if is_valid_deviation(new, model):
                    accepted.append(cand)
                    seq = new
                    break
            else:
                raise RuntimeError(f"could not place {kind} in {tid}")
        cursor += per
        traces.append(Trace(tid, seq))
        gt[tid] = tuple(accepted)
    order = list(range(len(traces)))
    rng.shuffle(order)
    log = EventLog("p2p", tuple(traces[i] for i in order))
    return model, LogBundle(log, gt)


# --- bpic19-context ------------------------------------------------------------

CPO, GR, CPR = "Create Purchase Order Item", "Record Goods Receipt", "Create Purchase Requisition Item"
BPIC_VARIANTS = [
    ([CPO, GR], 34),
    ([CPR, CPO, GR], 17),
    ([CPO, GR, GR], 9),
    ([CPO, "Change Quantity", "Delete Purchase Order Item"], 3),
    ([CPO, "Change Storage Location", GR], 2),
    ([CPO, "Change Quantity", "Change Quantity", GR], 2),
    ([CPR, CPO, "Delete Purchase Order Item"], 1),
]


def bpic_log():
    rng = random.Random(2019)
    seqs = [tuple(v) for v, n in BPIC_VARIANTS for _ in range(n)]
    rng.shuffle(seqs)
    return EventLog("bpic19-consignment", tuple(Trace(f"case{i:03d}", s) for i, s in enumerate(seqs, 1)))


# --- two-models ------------------------------------------------------------------

ORDER_MODEL = {
    "id": "order-handling",
    "sequences": [
        ["Receive Order", "Check Stock", "Confirm Order", "Ship Goods", "Send Invoice", "Receive Payment"],
        ["Receive Order", "Check Stock", "Confirm Order", "Send Invoice", "Ship Goods", "Receive Payment"],
        ["Receive Order", "Check Stock", "Reject Order", "Notify Customer"],
    ],
}

CLAIM_NET = {
    "id": "claim-handling",
    "places": ["i", "p0", "p1", "p2", "p3", "p4", "p5", "o"],
    "transitions": [
        {"id": "t1", "label": "Register Claim"},
        {"id": "t2", "label": "Check Policy"},
        {"id": "t3", "label": "Assess Damage"},
        {"id": "t4", "label": "Approve Claim"},
        {"id": "t5", "label": "Reject Claim"},
        {"id": "t6", "label": "Close Claim"},
        {"id": "split", "label": None},
    ],
    "arcs": [["i", "t1"], ["t1", "p0"], ["p0", "split"], ["split", "p1"], ["split", "p2"],
             ["p1", "t2"], ["t2", "p3"], ["p2", "t3"], ["t3", "p4"],
             ["p3", "t4"], ["p4", "t4"], ["p3", "t5"], ["p4", "t5"],
             ["t4", "p5"], ["t5", "p5"], ["p5", "t6"], ["t6", "o"]],
    "source": "i",
    "sink": "o",
}


def write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=1, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def manifest(root: Path, name: str, description: str, values: list, extra=None) -> None:
    files = {p.relative_to(root).as_posix(): sha256(p)
             for p in sorted(root.rglob("*")) if p.is_file() and p.name != "manifest.json"}
    doc = {"name": name, "description": description, "files": files, "values": values, **(extra or {})}
    write_json(root / "manifest.json", doc)


def main() -> None:
    if DATA.exists():
        shutil.rmtree(DATA)

    root = DATA / "p2p-shape"
    root.mkdir(parents=True)
    model, bundle = p2p_bundle()
    write_json(root / "model.json", model_to_document(model))
    write_bundle(bundle, root / "bundle.json")
    truth = {tid: format_patterns(ds) for tid, ds in bundle.ground_truth.items()}
    flip = bundle.deviating_ids()[0]
    write_json(root / "oracle_replies.json", {"default": None, "replies": truth})
    write_json(root / "flip_replies.json", {"default": None, "replies": truth,
                                            "by_seed": {"2": {flip: "No Deviation."}}})
    golden = root / "golden"
    golden.mkdir()
    first = bundle.log.traces[0]
    zero_shot = detect_trace(first, None, None, ScriptedBackend(), k=0).prompt
    (golden / "zero_shot.txt").write_text(zero_shot, encoding="utf-8")
    row = descriptive_stats([bundle])
    manifest(root, "p2p-shape",
             "Purchase-to-pay log whose trace and pattern counts mirror the published P2P row. "
             "Activity labels and the traces themselves are invented.",
             [{"field": "logs", "value": row.logs, "provenance": "published"},
              {"field": "total", "value": row.total, "provenance": "published"},
              {"field": "conforming", "value": row.conforming, "provenance": "published"},
              {"field": "deviating", "value": row.deviating, "provenance": "published"},
              {"field": "avg_deviations", "value": "0.51", "provenance": "published"},
              *({"field": c, "value": n, "provenance": "published"} for c, n in row.patterns),
              {"field": "patterns_per_deviating_trace", "value": P2P_PER_TRACE, "provenance": "synthetic"},
              {"field": "flip_trace", "value": flip, "provenance": "synthetic"}],
             {"label_content": "synthetic", "golden_trace": first.id})

    root = DATA / "bpic19-context"
    root.mkdir(parents=True)
    log = bpic_log()
    write_xes(log, root / "log.xes")
    ctx = extract_log_context(log)
    golden = root / "golden"
    golden.mkdir()
    probe = next(t for t in log.traces if "Change Storage Location" in t.activities)
    (golden / "context_only.txt").write_text(
        detect_trace(probe, None, ctx, ScriptedBackend(), k=0).prompt, encoding="utf-8")
    manifest(root, "bpic19-context",
             "Consignment-style purchase order log. The three most frequent variants are the "
             "published ones; all frequencies and the remaining variants are invented.",
             [{"field": "top_traces", "value": [list(s) for s, _ in ctx.frequent_traces], "provenance": "published"},
              {"field": "variant_counts", "value": [n for _, n in BPIC_VARIANTS], "provenance": "synthetic"},
              {"field": "total", "value": len(log), "provenance": "derived"}],
             {"label_content": "top variants published, rest synthetic", "golden_trace": probe.id})

    root = DATA / "two-models"
    (root / "models").mkdir(parents=True)
    write_json(root / "models" / "order-handling.json", ORDER_MODEL)
    write_json(root / "models" / "claim-handling.json", CLAIM_NET)
    manifest(root, "two-models", "A sequence model and a workflow net with disjoint alphabets.",
             [{"field": "models", "value": 2, "provenance": "trivial"}], {"label_content": "synthetic"})
    print(f"fixtures written to {DATA}")


if __name__ == "__main__":
    main()
