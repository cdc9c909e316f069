"""``tracerag`` command line: build-kb, synth-logs, detect, evaluate, stats, bench."""
from __future__ import annotations

import argparse
import json
import re
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

from .backends import BackendError, backend_metadata, make_backend
from .detect import RagDeviationDetector, read_results, write_results
from .embed import HashedNgramEmbedder, RemoteEmbedder
from .evalx import (
    aggregate_metrics,
    descriptive_stats,
    detector_run,
    robustness_run,
    score_results,
    timing_report,
)
from .kb import KbFormatError, build_kb, load_kb, save_kb
from .loggen import InjectionConfig, InjectionError, synthesize_bundle
from .model_io import (
    EmptyLanguageError,
    IntegrityError,
    LogFormatError,
    ModelParseError,
    PlayoutBudgetError,
    SchemaError,
    load_models,
    read_bundle,
    read_log_any,
    write_bundle,
)

KNOWN_ERRORS = (OSError, ModelParseError, SchemaError, LogFormatError, IntegrityError, EmptyLanguageError,
                PlayoutBudgetError, KbFormatError, InjectionError, BackendError, ValueError)


class CliError(Exception):
    pass


@dataclass
class RunConfig:
    """Everything a detect run depends on; written to ``config.json`` before running."""

    seed: int = 0
    backend: str = "null"
    k: int = 5
    n_traces: int = 3
    activity_threshold: float = 0.10
    dim: int = 256
    embedder_url: Optional[str] = None
    embedder_model: Optional[str] = None
    temperature: float = 0.0
    max_tokens: int = 1024
    workers: Optional[int] = None
    injection: dict = field(default_factory=lambda: InjectionConfig().to_dict())
    paths: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise CliError(f"{path}: unknown config keys {sorted(unknown)}")
        return cls(**doc)

    def embedder(self):
        if self.embedder_url:
            return RemoteEmbedder(self.embedder_url, self.embedder_model or "default", self.dim)
        return HashedNgramEmbedder(self.dim)


def _safe_name(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", text)


class _Paths:
    """Resolves relative paths against ``--run-dir`` when one is given."""

    def __init__(self, run_dir: Optional[str]):
        self.run_dir = Path(run_dir) if run_dir else None
        if self.run_dir:
            self.run_dir.mkdir(parents=True, exist_ok=True)

    def __call__(self, p) -> Optional[Path]:
        if p is None:
            return None
        p = Path(p)
        return p if p.is_absolute() or self.run_dir is None else self.run_dir / p


def _injection_from_args(args) -> InjectionConfig:
    base = InjectionConfig()
    return InjectionConfig(
        deviating_share=args.share if args.share is not None else base.deviating_share,
        max_deviations_per_trace=args.max_devs,
        fragment_len_min=args.frag_min,
        fragment_len_max=args.frag_max,
        retries_per_trace=args.retries,
        min_traces=args.min_traces,
        seed=args.seed,
    ).validate()


def _models(path: Path):
    if not path.is_dir():
        raise CliError(f"models directory not found: {path}")
    models = load_models(path)
    if not models:
        raise CliError(f"no models found in {path}")
    return models


def cmd_build_kb(args, paths: _Paths) -> int:
    models = _models(paths(args.models))
    cfg = _injection_from_args(args)
    kb = build_kb(models, cfg, HashedNgramEmbedder(args.dim), args.share if args.share is not None else 0.5)
    out = paths(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_kb(kb, out)
    print(f"knowledge base {out}: {len(kb)} entries from {len(models)} models")
    print(kb.stats.summary())
    return 0


def cmd_synth_logs(args, paths: _Paths) -> int:
    models = _models(paths(args.models))
    cfg = _injection_from_args(args)
    out = paths(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for m in models:
        bundle = synthesize_bundle(m, cfg)
        target = out / f"{_safe_name(m.id)}.json"
        write_bundle(bundle, target)
        share = len(bundle.deviating_ids()) / len(bundle.log)
        print(f"{target.name}: {len(bundle.log)} traces, deviating share {share:.3f}")
    return 0


def _detect_config(args, paths: _Paths) -> RunConfig:
    if args.config:
        return RunConfig.from_file(paths(args.config))
    return RunConfig(seed=args.seed, backend=args.backend, k=args.k, n_traces=args.n_traces,
                     activity_threshold=args.threshold, dim=args.dim, temperature=args.temperature,
                     max_tokens=args.max_tokens, workers=args.workers,
                     paths={"log": args.log, "kb": args.kb, "out": args.out})


def cmd_detect(args, paths: _Paths) -> int:
    cfg = _detect_config(args, paths)
    log_path, kb_path = paths(cfg.paths.get("log")), paths(cfg.paths.get("kb"))
    out = paths(cfg.paths.get("out") or "results.jsonl")
    if log_path is None:
        raise CliError("detect needs --log")
    if paths.run_dir is not None:
        (paths.run_dir / "config.json").write_text(cfg.to_json(), encoding="utf-8")
    log, bundle = read_log_any(log_path)
    kb = load_kb(kb_path) if kb_path is not None else None
    backend = cfg.backend
    if isinstance(backend, str) and backend.startswith("remote:") and paths.run_dir is not None:
        backend = make_backend(backend, log_dir=paths.run_dir)
    detector = RagDeviationDetector(backend=backend, k=cfg.k if kb is not None else 0, n_traces=cfg.n_traces,
                                    activity_threshold=cfg.activity_threshold, dim=cfg.dim, seed=cfg.seed,
                                    kb=kb, embedder=cfg.embedder() if kb is not None else None,
                                    temperature=cfg.temperature, max_tokens=cfg.max_tokens, workers=cfg.workers)
    detector.fit()
    results = detector.predict(bundle if bundle is not None else log)
    raw_paths = {}
    if paths.run_dir is not None:
        prompts, replies = paths.run_dir / "prompts", paths.run_dir / "raw_replies"
        prompts.mkdir(exist_ok=True)
        replies.mkdir(exist_ok=True)
        for i, r in enumerate(results):
            name = f"{i:05d}_{_safe_name(r.trace_id)}.txt"
            (prompts / name).write_text(r.prompt, encoding="utf-8")
            (replies / name).write_text(r.raw_reply, encoding="utf-8")
            raw_paths[r.trace_id] = f"raw_replies/{name}"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_results(results, out, raw_paths)
    failed = sum(r.failed for r in results)
    print(f"{len(results)} traces analysed, {sum(bool(r.deviations) for r in results)} with deviations, "
          f"{failed} failed; results in {out}")
    if paths.run_dir is not None:
        meta = {**backend_metadata(detector.backend_, detector.generation_config()),
                "seconds": detector.last_predict_seconds_, "failures": failed}
        (paths.run_dir / "run.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n",
                                                encoding="utf-8")
    return 0


def _write_report(report_text: str, out: Optional[Path]) -> None:
    if out is None:
        sys.stdout.write(report_text)
        return
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report_text, encoding="utf-8")
    print(f"report written to {out}")


def _render(report, fmt: str) -> str:
    if fmt == "json":
        return report.to_json()
    if fmt == "csv":
        return report.to_csv()
    return "".join(report.to_text(log) for log in report.rows) + "\n" + report.to_text()


def cmd_evaluate(args, paths: _Paths) -> int:
    results = read_results(paths(args.results))
    bundle = read_bundle(paths(args.truth))
    counts = score_results(bundle, results, args.labeling)
    report = aggregate_metrics({bundle.log.name: counts}, {"labeling": args.labeling})
    out = paths(args.out)
    if out is None and paths.run_dir is not None:
        out = paths.run_dir / "report.json"
    fmt = args.format or (out.suffix.lstrip(".") if out is not None and out.suffix in (".json", ".csv") else "text")
    _write_report(_render(report, fmt), out)
    if out is not None and fmt != "text":
        print(report.to_text(bundle.log.name), end="")
    return 0


def _bundle_files(spec: Sequence[str], paths: _Paths) -> List[Path]:
    files = []
    for s in spec:
        p = paths(s)
        if p.is_dir():
            files += sorted(p.glob("*.json"))
        elif p.is_file():
            files.append(p)
        else:
            raise CliError(f"no such bundle file or directory: {p}")
    if not files:
        raise CliError("no bundles found")
    return files


def cmd_stats(args, paths: _Paths) -> int:
    row = descriptive_stats([read_bundle(f) for f in _bundle_files(args.bundles, paths)])
    text = json.dumps(row.to_dict(), indent=2) + "\n" if args.json else row.to_text()
    _write_report(text, paths(args.out))
    return 0


def cmd_bench(args, paths: _Paths) -> int:
    cfg_path = paths(args.config)
    doc = json.loads(cfg_path.read_text(encoding="utf-8"))
    base = cfg_path.parent

    def rel(p):
        p = Path(p)
        return p if p.is_absolute() else base / p

    seeds = doc.get("seeds", [1, 2, 3])
    models = _models(rel(doc["models"])) if doc.get("models") else None
    bundles = {}
    for f in _bundle_files([str(rel(doc["bundles"]))], _Paths(None)):
        b = read_bundle(f)
        bundles[b.log.name] = b
    injection = InjectionConfig.from_dict(doc["injection"]) if "injection" in doc else None
    detector = RagDeviationDetector(backend=doc.get("backend", "oracle"), k=doc.get("k", 5) if models else 0,
                                    n_traces=doc.get("n_traces", 3),
                                    activity_threshold=doc.get("activity_threshold", 0.10),
                                    dim=doc.get("dim", 256), share=doc.get("share", 0.5), injection=injection,
                                    workers=doc.get("workers"))
    start = time.perf_counter()
    robust = robustness_run(detector_run(detector, models, bundles, doc.get("labeling", "mirrored")), seeds)
    timings = [timing_report(r.metadata.get("timing")) for r in robust.per_seed.values()]
    report = {"robustness": robust.to_dict(), "timing": timings, "seconds": time.perf_counter() - start,
              "config": doc}
    out = paths(args.out) or (paths.run_dir / "report.json" if paths.run_dir else None)
    print("standard deviation over seeds " + ", ".join(map(str, seeds)))
    print(robust.to_text(), end="")
    for s, t in zip(robust.per_seed, timings):
        if t.get("available", True):
            print(f"seed {s}: kb population {t['kb_population']:.2f}s, mean inference {t['inference']:.2f}s per log")
    if robust.errors:
        print(f"failed seeds: {robust.errors}")
    if out is not None:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(json.dumps(report, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
        print(f"report written to {out}")
    return 0


def _add_injection(p):
    d = InjectionConfig()
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--share", type=float, default=None,
                   help="deviating share of traces (synth-logs default 0.55, build-kb default 0.5)")
    p.add_argument("--max-devs", type=int, default=d.max_deviations_per_trace)
    p.add_argument("--frag-min", type=int, default=d.fragment_len_min)
    p.add_argument("--frag-max", type=int, default=d.fragment_len_max)
    p.add_argument("--retries", type=int, default=d.retries_per_trace)
    p.add_argument("--min-traces", type=int, default=d.min_traces)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tracerag", description=__doc__)
    parser.add_argument("--run-dir", help="resolve relative paths here and keep run artifacts")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-kb", help="populate a knowledge base from process models")
    p.add_argument("--models", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dim", type=int, default=256)
    _add_injection(p)
    p.set_defaults(func=cmd_build_kb)

    p = sub.add_parser("synth-logs", help="generate logs with injected deviations, one per model")
    p.add_argument("--models", required=True)
    p.add_argument("--out", required=True)
    _add_injection(p)
    p.set_defaults(func=cmd_synth_logs)

    p = sub.add_parser("detect", help="detect deviations in every trace of a log")
    p.add_argument("--config", help="rerun from a saved config.json (other options are ignored)")
    p.add_argument("--log")
    p.add_argument("--kb")
    p.add_argument("--backend", default="null")
    p.add_argument("--out")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--n-traces", type=int, default=3)
    p.add_argument("--threshold", type=float, default=0.10)
    p.add_argument("--dim", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--temperature", type=float, default=0.0)
    p.add_argument("--max-tokens", type=int, default=1024)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("evaluate", help="score detection results against ground truth")
    p.add_argument("--results", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out")
    p.add_argument("--format", choices=("json", "text", "csv"))
    p.add_argument("--labeling", choices=("mirrored", "conventional"), default="mirrored",
                   help="how the conforming class labels missed and spurious detections")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("stats", help="descriptive statistics of log bundles")
    p.add_argument("--bundles", nargs="+", required=True)
    p.add_argument("--json", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("bench", help="repeat a detect+evaluate run over several seeds")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args, _Paths(args.run_dir))
    except CliError as exc:
        print(f"tracerag: error: {exc}", file=sys.stderr)
    except KNOWN_ERRORS as exc:
        print(f"tracerag: error: {type(exc).__name__}: {exc}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
