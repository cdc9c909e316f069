"""Small packaged fixtures with manifests.

Each fixture directory holds a ``manifest.json`` listing file checksums and
the numbers the fixture is meant to reproduce, each tagged with where the
number comes from (``published``, ``derived``, ``trivial``, ``synthetic``).
"""
from __future__ import annotations

import hashlib
import json
import shutil
import tempfile
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional

PROVENANCE_TAGS = ("published", "derived", "trivial", "synthetic")


class FixtureError(ValueError):
    pass


@dataclass(frozen=True)
class Fixture:
    name: str
    root: Path
    manifest: dict

    @property
    def files(self) -> Dict[str, Path]:
        return {rel: self.root / rel for rel in self.manifest["files"]}

    def path(self, rel: str) -> Path:
        return self.root / rel

    def value(self, field: str):
        for entry in self.manifest["values"]:
            if entry["field"] == field:
                return entry["value"]
        raise KeyError(field)


def _data_root() -> Path:
    return Path(str(resources.files("tracerag.fixtures").joinpath("data")))


def fixture_names() -> List[str]:
    return sorted(p.name for p in _data_root().iterdir() if (p / "manifest.json").is_file())


def verify_fixture(fx: Fixture) -> None:
    """Check checksums, provenance tags and the recomputable values."""
    for entry in fx.manifest["values"]:
        if entry.get("provenance") not in PROVENANCE_TAGS:
            raise FixtureError(f"{fx.name}: value {entry.get('field')!r} lacks a provenance tag")
    for rel, digest in fx.manifest["files"].items():
        p = fx.root / rel
        if not p.is_file():
            raise FixtureError(f"{fx.name}: missing file {rel}")
        if hashlib.sha256(p.read_bytes()).hexdigest() != digest:
            raise FixtureError(f"{fx.name}: checksum mismatch for {rel}")
    _recount(fx)


def _recount(fx: Fixture) -> None:
    from ..evalx import descriptive_stats
    from ..model_io import load_models, read_bundle, read_event_log
    from ..promptgen import extract_log_context

    expected = {e["field"]: e["value"] for e in fx.manifest["values"]}
    if "bundle.json" in fx.manifest["files"]:
        row = descriptive_stats([read_bundle(fx.path("bundle.json"))]).to_dict()
        for key, got in row.items():
            # the display average is checked by the statistics tests, not here
            if key in expected and key != "avg_deviations" and expected[key] != got:
                raise FixtureError(f"{fx.name}: {key} is {got}, manifest says {expected[key]}")
    if "log.xes" in fx.manifest["files"]:
        ctx = extract_log_context(read_event_log(fx.path("log.xes")))
        if [list(s) for s, _ in ctx.frequent_traces] != expected.get("top_traces"):
            raise FixtureError(f"{fx.name}: frequent traces differ from manifest")
    if "models" in expected and len(load_models(fx.path("models"))) != expected["models"]:
        raise FixtureError(f"{fx.name}: model count differs from manifest")


def load_fixture(name: str, dest: Optional[Path] = None) -> Fixture:
    """Copy fixture ``name`` into ``dest`` (default: a fresh temp dir) and verify it."""
    src = _data_root() / name
    if not (src / "manifest.json").is_file():
        raise FixtureError(f"unknown fixture {name!r}; available: {', '.join(fixture_names())}")
    dest = Path(dest) if dest is not None else Path(tempfile.mkdtemp(prefix=f"tracerag-{name}-"))
    target = dest / name
    shutil.copytree(src, target, dirs_exist_ok=True)
    fx = Fixture(name, target, json.loads((target / "manifest.json").read_text(encoding="utf-8")))
    verify_fixture(fx)
    return fx
