"""Reading and writing process models, event logs and ground-truth bundles."""
from __future__ import annotations

import json
import xml.etree.ElementTree as ET
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import FrozenSet, Iterable, List, Mapping, Optional, Tuple

from .core import (
    DeviationPattern,
    EventLog,
    PatternKind,
    ProcessModel,
    Trace,
    TraceError,
    activity,
)


class ModelParseError(ValueError):
    """Malformed document (bad JSON/XML, wrong shape)."""


class SchemaError(ValueError):
    """Well-formed document whose content violates the schema."""


class LogFormatError(ValueError):
    """Event log that cannot be turned into traces."""


class IntegrityError(ValueError):
    """Bundle whose ground truth does not line up with its log."""


class EmptyLanguageError(ValueError):
    pass


class PlayoutBudgetError(RuntimeError):
    pass


def _load_json(text: str, what: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelParseError(f"{what}: {exc.msg} at line {exc.lineno}, column {exc.colno}") from exc


# --- sequence models -------------------------------------------------------

def parse_sequence_model(document) -> ProcessModel:
    """Build a :class:`ProcessModel` from ``{"id", "alphabet"?, "sequences"}``.

    ``document`` may be JSON text or an already decoded mapping.
    """
    doc = _load_json(document, "sequence model") if isinstance(document, (str, bytes)) else document
    if not isinstance(doc, Mapping):
        raise ModelParseError("sequence model must be a JSON object")
    if "id" not in doc or "sequences" not in doc:
        raise SchemaError("sequence model needs 'id' and 'sequences'")
    seqs = doc["sequences"]
    if not isinstance(seqs, list) or not all(isinstance(s, list) for s in seqs):
        raise SchemaError("'sequences' must be a list of lists")
    if not seqs:
        raise SchemaError(f"model {doc['id']!r}: empty sequence set")
    try:
        parsed = [tuple(activity(a) for a in s) for s in seqs]
    except TraceError as exc:
        raise SchemaError(str(exc)) from exc
    seen = set()
    for s in parsed:
        if s in seen:
            raise SchemaError(f"model {doc['id']!r}: duplicate sequence {list(s)}")
        seen.add(s)
    try:
        return ProcessModel(str(doc["id"]), tuple(parsed), frozenset(doc.get("alphabet", ())))
    except TraceError as exc:
        raise SchemaError(str(exc)) from exc


def model_to_document(model: ProcessModel) -> dict:
    return {
        "id": model.id,
        "alphabet": sorted(model.alphabet),
        "sequences": [list(s) for s in model.sequences],
    }


# --- workflow nets ---------------------------------------------------------

@dataclass(frozen=True)
class WorkflowNet:
    """Place/transition net with one source and one sink place.

    ``transitions`` maps transition id to its label (``None`` = silent).
    """

    id: str
    places: FrozenSet[str]
    transitions: Mapping[str, Optional[str]]
    arcs: FrozenSet[Tuple[str, str]]
    source: str
    sink: str

    def __post_init__(self):
        object.__setattr__(self, "places", frozenset(self.places))
        object.__setattr__(self, "arcs", frozenset(tuple(a) for a in self.arcs))
        object.__setattr__(self, "transitions", dict(self.transitions))
        self._check()

    def _check(self):
        places, trans = self.places, set(self.transitions)
        if places & trans:
            raise SchemaError(f"net {self.id!r}: ids shared by places and transitions")
        for a, b in self.arcs:
            if not ((a in places and b in trans) or (a in trans and b in places)):
                raise SchemaError(f"net {self.id!r}: arc {a}->{b} is not place<->transition")
        incoming = {b for _, b in self.arcs}
        outgoing = {a for a, _ in self.arcs}
        sources = [p for p in places if p not in incoming]
        sinks = [p for p in places if p not in outgoing]
        if sources != [self.source] or sinks != [self.sink]:
            raise SchemaError(f"net {self.id!r}: needs exactly one source {self.source!r} "
                              f"and one sink {self.sink!r} (found {sorted(sources)}, {sorted(sinks)})")
        succ, pred = defaultdict(set), defaultdict(set)
        for a, b in self.arcs:
            succ[a].add(b)
            pred[b].add(a)
        fwd, bwd = _reach(self.source, succ), _reach(self.sink, pred)
        stray = (places | trans) - (fwd & bwd)
        if stray:
            raise SchemaError(f"net {self.id!r}: nodes not on a source-sink path: {sorted(stray)}")


def _reach(start, edges):
    seen, todo = {start}, [start]
    while todo:
        for n in edges[todo.pop()]:
            if n not in seen:
                seen.add(n)
                todo.append(n)
    return seen


def parse_workflow_net(document) -> WorkflowNet:
    doc = _load_json(document, "workflow net") if isinstance(document, (str, bytes)) else document
    try:
        return WorkflowNet(
            id=str(doc["id"]),
            places=frozenset(doc["places"]),
            transitions={t["id"]: (None if t.get("label") is None else activity(t["label"]))
                         for t in doc["transitions"]},
            arcs=frozenset(tuple(a) for a in doc["arcs"]),
            source=doc["source"],
            sink=doc["sink"],
        )
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"workflow net: missing or malformed field {exc}") from exc


def playout_net(net: WorkflowNet, loop_bound: int = 2, max_sequences: int = 100_000,
                state_budget: int = 2_000_000) -> ProcessModel:
    """Enumerate the visible-label language of ``net``.

    Runs start at one token on the source and must end with exactly one
    token on the sink. Every transition fires at most ``loop_bound`` times
    per run. Depth-first search visits at most ``state_budget`` states.
    The result is sorted; ``truncated`` is set when ``max_sequences`` cut
    the enumeration short.
    """
    if loop_bound < 1 or max_sequences < 1:
        raise ValueError("loop_bound and max_sequences must be positive")
    tids = sorted(net.transitions)
    pre = {t: Counter() for t in tids}
    post = {t: Counter() for t in tids}
    for a, b in net.arcs:
        if a in net.transitions:
            post[a][b] += 1
        else:
            pre[b][a] += 1
    pindex = {p: i for i, p in enumerate(sorted(net.places))}
    n = len(pindex)

    def marking(counter):
        m = [0] * n
        for p, k in counter.items():
            m[pindex[p]] = k
        return tuple(m)

    pre_v = {t: [(pindex[p], k) for p, k in pre[t].items()] for t in tids}
    post_v = {t: [(pindex[p], k) for p, k in post[t].items()] for t in tids}
    tindex = {t: i for i, t in enumerate(tids)}
    start = marking({net.source: 1})
    final = marking({net.sink: 1})

    found: set = set()
    truncated = False
    visited = 0
    # (marking, fire counts, labels so far); explicit stack avoids recursion limits
    stack = [(start, (0,) * len(tids), ())]
    # states already expanded with a given label prefix produce identical subtrees
    expanded = set()
    while stack:
        m, counts, labels = stack.pop()
        key = (m, counts, labels)
        if key in expanded:
            continue
        expanded.add(key)
        visited += 1
        if visited > state_budget:
            raise PlayoutBudgetError(f"net {net.id!r}: playout exceeded state budget of {state_budget}")
        if m == final:
            if labels:
                found.add(labels)
                if len(found) >= max_sequences:
                    truncated = bool(stack)
                    break
            continue
        for t in reversed(tids):
            ti = tindex[t]
            if counts[ti] >= loop_bound:
                continue
            if any(m[i] < k for i, k in pre_v[t]):
                continue
            nm = list(m)
            for i, k in pre_v[t]:
                nm[i] -= k
            for i, k in post_v[t]:
                nm[i] += k
            nc = counts[:ti] + (counts[ti] + 1,) + counts[ti + 1:]
            label = net.transitions[t]
            stack.append((tuple(nm), nc, labels + (label,) if label is not None else labels))
    if not found:
        raise EmptyLanguageError(f"net {net.id!r}: no complete firing sequence within loop bound {loop_bound}")
    return ProcessModel(net.id, tuple(sorted(found)), frozenset(l for l in net.transitions.values() if l),
                        truncated=truncated)


def load_model(path) -> ProcessModel:
    """Read a sequence-model or workflow-net JSON file (told apart by ``places``)."""
    path = Path(path)
    doc = _load_json(path.read_text(encoding="utf-8"), str(path))
    if isinstance(doc, Mapping) and "places" in doc:
        return playout_net(parse_workflow_net(doc))
    return parse_sequence_model(doc)


def load_models(directory) -> List[ProcessModel]:
    files = sorted(Path(directory).glob("*.json"))
    return [load_model(f) for f in files]


def has_min_activities(model: ProcessModel, n: int = 5) -> bool:
    return len(model.alphabet) >= n


def distinct_alphabets(models: Iterable[ProcessModel]) -> List[ProcessModel]:
    """Keep the first model for every distinct activity set."""
    seen, out = set(), []
    for m in models:
        if m.alphabet not in seen:
            seen.add(m.alphabet)
            out.append(m)
    return out


# --- event logs ------------------------------------------------------------

def _xes_key(elem) -> str:
    return elem.tag.rsplit("}", 1)[-1]


def _concept_name(elem) -> Optional[str]:
    for child in elem:
        if _xes_key(child) == "string" and child.get("key") == "concept:name":
            return child.get("value")
    return None


def read_xes(path) -> EventLog:
    path = Path(path)
    try:
        root = ET.parse(path).getroot()
    except ET.ParseError as exc:
        raise ModelParseError(f"{path}: {exc}") from exc
    traces = []
    for ti, trace_el in enumerate(e for e in root if _xes_key(e) == "trace"):
        labels = []
        for ei, event_el in enumerate(e for e in trace_el if _xes_key(e) == "event"):
            name = _concept_name(event_el)
            if name is None or not name.strip():
                raise LogFormatError(f"{path}: event without concept:name at (trace {ti}, event {ei})")
            labels.append(name)
        if not labels:
            raise LogFormatError(f"{path}: empty trace at index {ti}")
        tid = _concept_name(trace_el)
        traces.append(Trace(tid if tid else f"t{ti}", tuple(labels)))
    try:
        return EventLog(_concept_name(root) or path.stem, tuple(traces))
    except TraceError as exc:
        raise LogFormatError(f"{path}: {exc}") from exc


def read_jsonl(path) -> EventLog:
    path = Path(path)
    traces = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ModelParseError(f"{path}: line {lineno}, column {exc.colno}: {exc.msg}") from exc
            acts = obj.get("activities")
            if not acts:
                raise LogFormatError(f"{path}: line {lineno}: empty or missing activities")
            traces.append(Trace(str(obj.get("id", f"t{len(traces)}")), tuple(acts)))
    try:
        return EventLog(path.stem, tuple(traces))
    except TraceError as exc:
        raise LogFormatError(f"{path}: {exc}") from exc


def read_event_log(path, format: Optional[str] = None) -> EventLog:
    """Read a ``jsonl`` or ``xes`` log; the format defaults to the file suffix."""
    fmt = (format or Path(path).suffix.lstrip(".")).lower()
    if fmt == "xes":
        return read_xes(path)
    if fmt in ("jsonl", "ndjson"):
        return read_jsonl(path)
    raise ValueError(f"unsupported log format {fmt!r}")


def write_jsonl(log: EventLog, path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for t in log.traces:
            fh.write(json.dumps({"id": t.id, "activities": list(t.activities)}, ensure_ascii=False) + "\n")


def write_xes(log: EventLog, path) -> None:
    root = ET.Element("log", {"xes.version": "1.0", "xmlns": "http://www.xes-standard.org/"})
    ET.SubElement(root, "string", key="concept:name", value=log.name)
    for t in log.traces:
        tr = ET.SubElement(root, "trace")
        ET.SubElement(tr, "string", key="concept:name", value=t.id)
        for a in t.activities:
            ev = ET.SubElement(tr, "event")
            ET.SubElement(ev, "string", key="concept:name", value=a)
    ET.indent(root)
    ET.ElementTree(root).write(path, encoding="utf-8", xml_declaration=True)


# --- bundles ---------------------------------------------------------------

@dataclass(frozen=True)
class LogBundle:
    """An event log with its ground truth (empty list = conforming trace)."""

    log: EventLog
    ground_truth: Mapping[str, Tuple[DeviationPattern, ...]] = field(default_factory=dict)

    def __post_init__(self):
        gt = {k: tuple(v) for k, v in self.ground_truth.items()}
        ids = set(self.log.ids)
        unknown = set(gt) - ids
        if unknown:
            raise IntegrityError(f"ground truth references unknown trace ids {sorted(unknown)[:5]}")
        for tid in self.log.ids:
            gt.setdefault(tid, ())
        object.__setattr__(self, "ground_truth", gt)

    def deviating_ids(self) -> List[str]:
        return [tid for tid in self.log.ids if self.ground_truth[tid]]

    def __eq__(self, other):
        if not isinstance(other, LogBundle):
            return NotImplemented
        return self.log == other.log and _gt_key(self) == _gt_key(other)

    def __hash__(self):
        return hash(self.log)


def _gt_key(bundle):
    return {k: [(d.kind, d.fragment_a, d.fragment_b, d.position) for d in v]
            for k, v in bundle.ground_truth.items()}


def pattern_to_dict(d: DeviationPattern) -> dict:
    out = {"kind": d.kind.value, "fragment_a": list(d.fragment_a)}
    if d.fragment_b is not None:
        out["fragment_b"] = list(d.fragment_b)
    if d.position is not None:
        out["position"] = d.position
    return out


def pattern_from_dict(obj: Mapping) -> DeviationPattern:
    try:
        kind = PatternKind(obj["kind"])
    except (KeyError, ValueError) as exc:
        raise SchemaError(f"bad deviation kind in {obj!r}") from exc
    fb = obj.get("fragment_b")
    return DeviationPattern(kind, tuple(obj["fragment_a"]), None if fb is None else tuple(fb),
                            obj.get("position"))


def bundle_to_dict(bundle: LogBundle) -> dict:
    return {
        "log": {
            "name": bundle.log.name,
            "traces": [{"id": t.id, "activities": list(t.activities)} for t in bundle.log.traces],
        },
        "ground_truth": {tid: [pattern_to_dict(d) for d in bundle.ground_truth[tid]]
                         for tid in bundle.log.ids},
    }


def bundle_from_dict(doc: Mapping) -> LogBundle:
    try:
        log_doc = doc["log"]
        log = EventLog(log_doc["name"], tuple(Trace(t["id"], tuple(t["activities"]))
                                              for t in log_doc["traces"]))
        gt = {tid: tuple(pattern_from_dict(p) for p in pats)
              for tid, pats in doc.get("ground_truth", {}).items()}
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"log bundle: missing or malformed field {exc}") from exc
    except TraceError as exc:
        raise SchemaError(str(exc)) from exc
    missing = set(log.ids) - set(gt)
    if missing:
        raise IntegrityError(f"ground truth lacks trace ids {sorted(missing)[:5]}")
    return LogBundle(log, gt)


def dumps_bundle(bundle: LogBundle) -> str:
    return json.dumps(bundle_to_dict(bundle), sort_keys=True, indent=1, ensure_ascii=False) + "\n"


def write_bundle(bundle: LogBundle, path) -> None:
    Path(path).write_text(dumps_bundle(bundle), encoding="utf-8")


def read_bundle(path) -> LogBundle:
    path = Path(path)
    return bundle_from_dict(_load_json(path.read_text(encoding="utf-8"), str(path)))


def read_log_any(path) -> Tuple[EventLog, Optional[LogBundle]]:
    """Read a bundle (``.json``) or a plain log (``.jsonl``/``.xes``)."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        bundle = read_bundle(path)
        return bundle.log, bundle
    return read_event_log(path), None
