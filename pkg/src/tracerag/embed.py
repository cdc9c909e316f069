"""Trace sentences, the built-in hashed n-gram embedder and cosine similarity."""
from __future__ import annotations

import hashlib
import json
import os
import time
import urllib.error
import urllib.request
from functools import lru_cache
from typing import Iterable, List, Protocol, Sequence, runtime_checkable

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .core import Trace


class EmbeddingError(ValueError):
    """Dimension mismatch or an operand without direction."""


def escape_label(label: str) -> str:
    return label.replace("\\", "\\\\").replace(",", "\\,")


def trace_to_sentence(trace) -> str:
    """Join activities with ``", "``; commas and backslashes inside labels are escaped."""
    acts = trace.activities if isinstance(trace, Trace) else trace
    return ", ".join(escape_label(a) for a in acts)


def split_sentence(sentence: str) -> List[str]:
    """Inverse of :func:`trace_to_sentence`."""
    out, cur, i = [], [], 0
    while i < len(sentence):
        ch = sentence[i]
        if ch == "\\" and i + 1 < len(sentence):
            cur.append(sentence[i + 1])
            i += 2
            continue
        if ch == ",":
            out.append("".join(cur).strip())
            cur = []
            i += 1
            continue
        cur.append(ch)
        i += 1
    out.append("".join(cur).strip())
    return [a for a in out if a]


_HASH_KEY = b"tracerag-ngram-v1"


@lru_cache(maxsize=1 << 16)
def stable_hash64(feature: str) -> int:
    return int.from_bytes(hashlib.blake2b(feature.encode("utf-8"), digest_size=8,
                                          key=_HASH_KEY).digest(), "little")


def ngram_features(activities: Sequence[str]) -> List[str]:
    """Lower-cased word unigrams of every label plus ``a→b`` activity bigrams."""
    feats = [w for a in activities for w in a.lower().split()]
    feats += [f"{a}→{b}" for a, b in zip(activities, activities[1:])]
    return feats


def hashed_ngram_embed(sentence, dim: int = 256) -> np.ndarray:
    """Signed feature hashing of :func:`ngram_features`, L2-normalized.

    ``sentence`` is a trace sentence (or a trace / activity sequence).
    Returns a float64 vector; the zero vector when there are no features.
    """
    if dim < 2:
        raise ValueError("dim must be >= 2")
    if isinstance(sentence, str):
        acts = split_sentence(sentence)
    else:
        acts = list(sentence.activities if isinstance(sentence, Trace) else sentence)
    vec = np.zeros(dim, dtype=np.float64)
    for f in ngram_features(acts):
        h = stable_hash64(f)
        vec[h % dim] += -1.0 if h >> 63 else 1.0
    norm = np.linalg.norm(vec)
    return vec / norm if norm > 0 else vec


def _with_norm(x):
    n = np.linalg.norm(x)
    if 0 < n < np.inf:
        return x, n
    scale = np.abs(x).max(initial=0.0)
    if scale == 0:
        raise EmbeddingError("cosine undefined for a zero vector")
    # tiny or huge entries under/overflowed the norm; rescale and retry
    x = x / scale
    return x, np.linalg.norm(x)


def cosine(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise EmbeddingError(f"dimension mismatch: {u.shape} vs {v.shape}")
    u, nu = _with_norm(u)
    v, nv = _with_norm(v)
    return float(min(1.0, max(-1.0, np.dot(u, v) / (nu * nv))))


@runtime_checkable
class Embedder(Protocol):
    name: str
    dim: int

    def embed(self, text: str) -> np.ndarray: ...


class HashedNgramEmbedder(TransformerMixin, BaseEstimator):
    """Deterministic built-in embedder; stateless, so ``fit`` is a no-op.

    ``transform`` accepts traces, activity sequences or sentences and
    returns an ``(n, dim)`` float64 array.
    """

    def __init__(self, dim: int = 256):
        self.dim = dim

    @property
    def name(self) -> str:
        return f"hashed-ngram-v1/{self.dim}"

    def fit(self, X=None, y=None):
        if self.dim < 2:
            raise ValueError("dim must be >= 2")
        self.n_features_out_ = self.dim
        return self

    def embed(self, text: str) -> np.ndarray:
        return hashed_ngram_embed(text, self.dim)

    def transform(self, X: Iterable) -> np.ndarray:
        rows = [hashed_ngram_embed(x, self.dim) for x in X]
        return np.vstack(rows) if rows else np.zeros((0, self.dim))

    def __sklearn_is_fitted__(self):
        return True


class RemoteEmbedder:
    """Embedding service over HTTP: POST ``{"model", "text"}`` -> ``{"embedding": [...]}``.

    The API key, if any, is read from ``api_key_env`` and sent as a bearer
    token. HTTP 429 responses are retried with exponential backoff.
    """

    def __init__(self, url: str, model: str, dim: int, api_key_env: str = "TRACERAG_API_KEY",
                 timeout: float = 60.0, max_retries: int = 4):
        self.url, self.model, self.dim = url, model, dim
        self.api_key_env, self.timeout, self.max_retries = api_key_env, timeout, max_retries

    @property
    def name(self) -> str:
        return f"remote:{self.model}/{self.dim}"

    def embed(self, text: str) -> np.ndarray:
        reply = post_json(self.url, {"model": self.model, "text": text}, self.api_key_env,
                          self.timeout, self.max_retries)
        vec = np.asarray(reply.get("embedding", ()), dtype=np.float64)
        if vec.shape != (self.dim,):
            raise EmbeddingError(f"{self.name}: expected {self.dim} values, got {vec.shape}")
        if not np.all(np.isfinite(vec)):
            raise EmbeddingError(f"{self.name}: non-finite embedding values")
        return vec


def post_json(url: str, payload: dict, api_key_env: str, timeout: float, max_retries: int) -> dict:
    headers = {"Content-Type": "application/json"}
    key = os.environ.get(api_key_env)
    if key:
        headers["Authorization"] = f"Bearer {key}"
    body = json.dumps(payload).encode("utf-8")
    delay = 0.5
    for attempt in range(max_retries + 1):
        req = urllib.request.Request(url, data=body, headers=headers, method="POST")
        try:
            with urllib.request.urlopen(req, timeout=timeout) as resp:
                return json.loads(resp.read().decode("utf-8"))
        except urllib.error.HTTPError as exc:
            if exc.code == 429 and attempt < max_retries:
                time.sleep(delay)
                delay *= 2
                continue
            raise


def embed_traces(embedder, traces) -> np.ndarray:
    """Embed traces through any embedder as an ``(n, dim)`` float32 matrix."""
    rows = [np.asarray(embedder.embed(trace_to_sentence(t)), dtype=np.float64) for t in traces]
    for r in rows:
        if r.shape != (embedder.dim,):
            raise EmbeddingError(f"{embedder.name}: got dimension {r.shape}, expected {embedder.dim}")
    if not rows:
        return np.zeros((0, embedder.dim), dtype=np.float32)
    return np.vstack(rows).astype(np.float32)
