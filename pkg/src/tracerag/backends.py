"""Text-generation backends.

Every backend exposes ``name``, ``concurrent`` and
``complete(prompt, config, *, trace_id=None, purpose="detect", bundle=None)``.
Only the remote backend looks at nothing but the prompt text; the
deterministic ones may use the trace id or the structured prompt bundle.
"""
from __future__ import annotations

import json
import re
import threading
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, Mapping, Optional, Sequence

from .core import NO_DEVIATION, DeviationPattern, format_patterns
from .embed import post_json


class BackendError(RuntimeError):
    """Transport or configuration failure of a backend."""


@dataclass(frozen=True)
class GenerationConfig:
    temperature: float = 0.0
    seed: int = 0
    max_tokens: int = 1024


class NullBackend:
    """Always answers ``No Deviation.``."""

    name = "null"
    concurrent = True

    def complete(self, prompt, config=GenerationConfig(), *, trace_id=None, purpose="detect", bundle=None):
        return NO_DEVIATION


class OracleBackend:
    """Answers with the ground truth of the requested trace."""

    name = "oracle"
    concurrent = True

    def __init__(self, truth: Mapping[str, Sequence[DeviationPattern]]):
        self.truth = dict(truth)

    def complete(self, prompt, config=GenerationConfig(), *, trace_id=None, purpose="detect", bundle=None):
        if trace_id not in self.truth:
            raise BackendError(f"oracle has no ground truth for trace {trace_id!r}")
        return format_patterns(self.truth[trace_id])


class _Locked:
    """Backends with a lock stay copyable (``sklearn.clone`` deep-copies parameters)."""

    def __getstate__(self):
        state = dict(self.__dict__)
        state.pop("_lock", None)
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._lock = threading.Lock()


class ScriptedBackend(_Locked):
    """Replies looked up by trace id from a script.

    Script layout (JSON)::

        {"default": "No Deviation.",
         "replies": {"<trace id>": "<reply>"},
         "by_seed": {"<seed>": {"<trace id>": "<reply>"}},
         "repair": {"<trace id>": "<reply>"}}

    ``by_seed`` entries override ``replies`` for that generation seed.
    """

    name = "scripted"
    concurrent = True

    def __init__(self, replies: Optional[Mapping[str, str]] = None, default: Optional[str] = NO_DEVIATION,
                 repair: Optional[Mapping[str, str]] = None,
                 by_seed: Optional[Mapping[str, Mapping[str, str]]] = None):
        self.replies = dict(replies or {})
        self.default = default
        self.repair = dict(repair or {})
        self.by_seed = {str(k): dict(v) for k, v in (by_seed or {}).items()}
        self.calls = []
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path) -> "ScriptedBackend":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(doc.get("replies"), doc.get("default", NO_DEVIATION), doc.get("repair"), doc.get("by_seed"))

    def complete(self, prompt, config=GenerationConfig(), *, trace_id=None, purpose="detect", bundle=None):
        with self._lock:
            self.calls.append((purpose, trace_id))
        if purpose == "repair":
            if trace_id in self.repair:
                return self.repair[trace_id]
            raise BackendError(f"no scripted repair reply for {trace_id!r}")
        seeded = self.by_seed.get(str(config.seed), {})
        if trace_id in seeded:
            return seeded[trace_id]
        if trace_id in self.replies:
            return self.replies[trace_id]
        if self.default is None:
            raise BackendError(f"no scripted reply for {trace_id!r}")
        return self.default


class HeuristicBackend:
    """Aligns the trace against the log's frequent traces (see
    :func:`tracerag.detect.heuristic_reference_detect`). Needs the prompt
    bundle; answers ``No Deviation.`` when the prompt carries no references."""

    name = "heuristic"
    concurrent = True

    def complete(self, prompt, config=GenerationConfig(), *, trace_id=None, purpose="detect", bundle=None):
        from .detect import heuristic_reference_detect

        if purpose == "repair":
            return NO_DEVIATION
        if bundle is None or bundle.trace is None:
            raise BackendError("heuristic backend needs the structured prompt bundle")
        refs = bundle.context.references if bundle.context is not None else []
        if not refs:
            return NO_DEVIATION
        return format_patterns(heuristic_reference_detect(bundle.trace, refs))


class RemoteBackend(_Locked):
    """HTTP text generation: POST ``{"model", "prompt", "temperature", "seed", "max_tokens"}``
    and read ``{"text"}`` back. Requests and replies are appended to
    ``log_dir/requests.jsonl`` when ``log_dir`` is set."""

    concurrent = True

    def __init__(self, url: str, model: str, api_key_env: str = "TRACERAG_API_KEY",
                 timeout: float = 120.0, max_retries: int = 4, log_dir=None):
        self.url, self.model = url, model
        self.api_key_env, self.timeout, self.max_retries = api_key_env, timeout, max_retries
        self.log_dir = Path(log_dir) if log_dir else None
        self._lock = threading.Lock()

    @property
    def name(self) -> str:
        return f"remote:{self.model}"

    def complete(self, prompt, config=GenerationConfig(), *, trace_id=None, purpose="detect", bundle=None):
        payload = {"model": self.model, "prompt": prompt, "temperature": config.temperature,
                   "seed": config.seed, "max_tokens": config.max_tokens}
        try:
            reply = post_json(self.url, payload, self.api_key_env, self.timeout, self.max_retries)
        except (OSError, ValueError) as exc:
            raise BackendError(f"{self.name}: {exc}") from exc
        if not isinstance(reply, dict) or not isinstance(reply.get("text"), str):
            raise BackendError(f"{self.name}: response lacks a 'text' field")
        if self.log_dir is not None:
            self.log_dir.mkdir(parents=True, exist_ok=True)
            with self._lock, (self.log_dir / "requests.jsonl").open("a", encoding="utf-8") as fh:
                fh.write(json.dumps({"trace_id": trace_id, "purpose": purpose, "request": payload,
                                     "response": reply}, ensure_ascii=False) + "\n")
        return reply["text"]


def make_backend(spec, truth: Optional[Mapping[str, Sequence[DeviationPattern]]] = None, **remote):
    """Resolve ``oracle``, ``null``, ``heuristic``, ``scripted:<path>`` or
    ``remote:<url>#<model>`` (objects with ``complete`` pass through)."""
    if hasattr(spec, "complete"):
        return spec
    if spec == "null":
        return NullBackend()
    if spec == "heuristic":
        return HeuristicBackend()
    if spec == "oracle":
        if truth is None:
            raise BackendError("the oracle backend needs ground truth (pass a log bundle)")
        return OracleBackend(truth)
    if isinstance(spec, str) and spec.startswith("scripted:"):
        return ScriptedBackend.from_file(spec.split(":", 1)[1])
    if isinstance(spec, str) and spec.startswith("remote:"):
        m = re.match(r"remote:(.+)#([^#]+)$", spec)
        if not m:
            raise BackendError("remote backend spec must look like remote:<url>#<model>")
        return RemoteBackend(m.group(1), m.group(2), **remote)
    raise BackendError(f"unknown backend {spec!r}")


def backend_metadata(backend, config: GenerationConfig) -> Dict[str, object]:
    meta = {"backend": backend.name, **asdict(config)}
    if isinstance(backend, RemoteBackend):
        meta.update(url=backend.url, model=backend.model)
    return meta
