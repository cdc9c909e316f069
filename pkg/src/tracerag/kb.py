"""Knowledge base of desired and deviating traces with exact cosine top-k."""
from __future__ import annotations

import hashlib
import io
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .core import PATTERN_KINDS, DeviationPattern, ProcessModel, Trace
from .embed import EmbeddingError, embed_traces
from .loggen import InjectionConfig, inject_deviations, model_to_log, with_share

MAGIC = b"TSKB"
VERSION = 1
RANK_DECIMALS = 12
_KIND_TAGS = {k: i for i, k in enumerate(PATTERN_KINDS)}


class KbFormatError(ValueError):
    """Unreadable, corrupted or incompatible knowledge-base file."""


@dataclass(frozen=True)
class KbEntry:
    trace: Trace
    deviations: Tuple[DeviationPattern, ...]
    source_model: str
    embedding: np.ndarray = field(compare=False, repr=False)

    @property
    def desired(self) -> bool:
        return not self.deviations


@dataclass(frozen=True)
class KbStats:
    desired: int
    deviating: int
    patterns: Dict[str, int]

    @classmethod
    def of(cls, entries: Iterable[KbEntry]) -> "KbStats":
        desired = deviating = 0
        patterns = {k.category: 0 for k in PATTERN_KINDS}
        for e in entries:
            if e.deviations:
                deviating += 1
                for d in e.deviations:
                    patterns[d.kind.category] += 1
            else:
                desired += 1
        return cls(desired, deviating, patterns)

    def summary(self) -> str:
        p = self.patterns
        return (f"{self.desired:,} desired traces and {self.deviating:,} undesired traces, "
                f"which contain {p['insert']:,} insertions, {p['skip']:,} skips, "
                f"{p['repeat']:,} repetitions, {p['replace']:,} replacements, and {p['swap']:,} swaps")

    def to_dict(self) -> dict:
        return {"desired": self.desired, "deviating": self.deviating, "patterns": dict(self.patterns)}


class KnowledgeBase:
    """Immutable store of embedded traces and their known deviations."""

    def __init__(self, embedder_name: str, dim: int, traces: Sequence[Trace],
                 deviations: Sequence[Sequence[DeviationPattern]], source_models: Sequence[str],
                 embeddings: np.ndarray, stats: Optional[KbStats] = None):
        matrix = np.ascontiguousarray(embeddings, dtype=np.float32).reshape(len(traces), dim)
        if not (len(traces) == len(deviations) == len(source_models)):
            raise ValueError("traces, deviations and source_models differ in length")
        if not np.all(np.isfinite(matrix)):
            raise EmbeddingError("knowledge base embeddings must be finite")
        matrix.setflags(write=False)
        self.embedder_name = embedder_name
        self.dim = dim
        self._matrix = matrix
        self.entries: Tuple[KbEntry, ...] = tuple(
            KbEntry(t, tuple(d), s, matrix[i]) for i, (t, d, s) in enumerate(zip(traces, deviations, source_models)))
        self.stats = KbStats.of(self.entries)
        if stats is not None and stats != self.stats:
            raise KbFormatError("stored statistics do not match entries")
        m64 = matrix.astype(np.float64)
        self._m64 = m64
        self._norms = np.sqrt((m64 * m64).sum(axis=1))
        self._sources = np.array([e.source_model for e in self.entries], dtype=object)

    def __len__(self):
        return len(self.entries)

    @property
    def embeddings(self) -> np.ndarray:
        return self._matrix

    def __eq__(self, other):
        if not isinstance(other, KnowledgeBase):
            return NotImplemented
        return (self.embedder_name == other.embedder_name and self.dim == other.dim
                and self.entries == other.entries and np.array_equal(self._matrix, other._matrix)
                and _positions(self) == _positions(other))

    __hash__ = None

    def similarities(self, query) -> np.ndarray:
        """Cosine similarity of ``query`` to every entry (0 for zero-norm entries)."""
        q = np.asarray(query, dtype=np.float64)
        if q.shape != (self.dim,):
            raise EmbeddingError(f"query dimension {q.shape} does not match knowledge base dim {self.dim}")
        qn = np.sqrt((q * q).sum())
        if qn == 0:
            raise EmbeddingError("cosine undefined for a zero query vector")
        dots = (self._m64 * q).sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            sims = dots / (self._norms * qn)
        sims[self._norms == 0] = 0.0
        return np.clip(sims, -1.0, 1.0)

    def retrieve_top_k(self, query, k: int = 5, exclude_models: Iterable[str] = ()) -> List[Tuple[int, KbEntry, float]]:
        return retrieve_top_k(self, query, k, exclude_models)


def _positions(kb):
    return [[d.position for d in e.deviations] for e in kb.entries]


def retrieve_top_k(kb: KnowledgeBase, query, k: int = 5,
                   exclude_models: Iterable[str] = ()) -> List[Tuple[int, KbEntry, float]]:
    """Exact k nearest entries by cosine: ``(index, entry, similarity)``.

    Sorted by descending similarity, ties by ascending entry index.
    Ranking uses similarities rounded to ``RANK_DECIMALS`` so that equal
    cosines reached through different float summation orders still tie.
    """
    if k < 0:
        raise ValueError("k must be non-negative")
    sims = kb.similarities(query)
    if k == 0 or len(kb) == 0:
        return []
    candidates = np.arange(len(kb))
    excluded = set(exclude_models)
    if excluded:
        candidates = candidates[~np.isin(kb._sources, list(excluded))]
    if len(candidates) == 0:
        return []
    csims = sims[candidates]
    ranks = np.round(csims, RANK_DECIMALS)
    if k < len(candidates):
        kth = np.partition(ranks, len(ranks) - k)[len(ranks) - k]
        keep = ranks >= kth
        candidates, csims, ranks = candidates[keep], csims[keep], ranks[keep]
    order = np.lexsort((candidates, -ranks))[:k]
    return [(int(candidates[i]), kb.entries[candidates[i]], float(csims[i])) for i in order]


def build_kb(models: Sequence[ProcessModel], cfg: InjectionConfig, embedder,
             share: float = 0.5) -> KnowledgeBase:
    """Generate, deviate and embed traces for every model.

    Each model yields its desired log (``model_to_log``) with deviations
    injected into ``share`` of the traces; entries follow model order,
    then trace order.
    """
    if not models:
        raise ValueError("build_kb needs at least one model")
    cfg = with_share(cfg, share)
    traces, devs, sources = [], [], []
    for m in models:
        bundle = inject_deviations(model_to_log(m, cfg), m, cfg)
        for t in bundle.log.traces:
            traces.append(t)
            devs.append(bundle.ground_truth[t.id])
            sources.append(m.id)
    matrix = embed_traces(embedder, traces)
    return KnowledgeBase(embedder.name, embedder.dim, traces, devs, sources, matrix)


# --- binary container ------------------------------------------------------

def _w_str(buf, s: str):
    b = s.encode("utf-8")
    buf.write(struct.pack("<I", len(b)))
    buf.write(b)


def _w_list(buf, items):
    buf.write(struct.pack("<I", len(items)))
    for s in items:
        _w_str(buf, s)


def checksum64(data: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little")


def dumps_kb(kb: KnowledgeBase) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, kb.dim))
    _w_str(buf, kb.embedder_name)
    buf.write(struct.pack("<Q", len(kb)))
    for e in kb.entries:
        _w_str(buf, e.trace.id)
        _w_list(buf, e.trace.activities)
        buf.write(np.asarray(e.embedding, dtype="<f4").tobytes())
        buf.write(struct.pack("<H", len(e.deviations)))
        for d in e.deviations:
            buf.write(struct.pack("<B", _KIND_TAGS[d.kind]))
            _w_list(buf, d.fragment_a)
            if d.kind.two_fragments:
                _w_list(buf, d.fragment_b)
            buf.write(struct.pack("<Bi", d.position is not None, d.position or 0))
        _w_str(buf, e.source_model)
    data = buf.getvalue()
    return data + struct.pack("<Q", checksum64(data))


def save_kb(kb: KnowledgeBase, path) -> None:
    Path(path).write_bytes(dumps_kb(kb))


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise KbFormatError("truncated knowledge base file")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def str(self) -> str:
        (n,) = self.unpack("<I")
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise KbFormatError("invalid utf-8 in knowledge base") from exc

    def strs(self) -> Tuple[str, ...]:
        (n,) = self.unpack("<I")
        return tuple(self.str() for _ in range(n))


def loads_kb(data: bytes) -> KnowledgeBase:
    if len(data) < 4 + 8 + 8 or data[:4] != MAGIC:
        raise KbFormatError("not a knowledge base file (bad magic)")
    payload, (stored,) = data[:-8], struct.unpack("<Q", data[-8:])
    r = _Reader(payload)
    r.take(4)
    version, dim = r.unpack("<II")
    if version != VERSION:
        raise KbFormatError(f"unsupported knowledge base version {version} (expected {VERSION})")
    if checksum64(payload) != stored:
        raise KbFormatError("knowledge base checksum mismatch")
    name = r.str()
    (count,) = r.unpack("<Q")
    kinds = list(PATTERN_KINDS)
    traces, devs, sources = [], [], []
    matrix = np.empty((count, dim), dtype=np.float32)
    for i in range(count):
        tid = r.str()
        acts = r.strs()
        matrix[i] = np.frombuffer(r.take(4 * dim), dtype="<f4")
        (ndev,) = r.unpack("<H")
        ds = []
        for _ in range(ndev):
            (tag,) = r.unpack("<B")
            if tag >= len(kinds):
                raise KbFormatError(f"unknown deviation tag {tag}")
            kind = kinds[tag]
            fa = r.strs()
            fb = r.strs() if kind.two_fragments else None
            has_pos, pos = r.unpack("<Bi")
            ds.append(DeviationPattern(kind, fa, fb, pos if has_pos else None))
        traces.append(Trace(tid, acts))
        devs.append(tuple(ds))
        sources.append(r.str())
    if r.pos != len(payload):
        raise KbFormatError("trailing bytes in knowledge base payload")
    return KnowledgeBase(name, dim, traces, devs, sources, matrix)


def load_kb(path) -> KnowledgeBase:
    return loads_kb(Path(path).read_bytes())


def check_compatible(kb: KnowledgeBase, embedder) -> None:
    if kb.embedder_name != embedder.name or kb.dim != embedder.dim:
        raise EmbeddingError(f"knowledge base was built with {kb.embedder_name!r} (dim {kb.dim}); "
                             f"pipeline uses {embedder.name!r} (dim {embedder.dim})")
