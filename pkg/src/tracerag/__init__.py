"""Retrieval-augmented detection of undesired behavior in process traces."""
from .core import (
    NO_DEVIATION,
    PATTERN_KINDS,
    DeviationPattern,
    EventLog,
    PatternKind,
    ProcessModel,
    Trace,
    format_pattern,
    format_patterns,
    normalize_deviation,
    pattern,
)
from .detect import DetectionResult, OutputParseError, RagDeviationDetector, detect_trace, parse_output
from .embed import HashedNgramEmbedder
from .evalx import aggregate_metrics, descriptive_stats, score_results, score_trace
from .kb import KnowledgeBase, build_kb, load_kb, save_kb
from .loggen import DeviationInjector, InjectionConfig, apply_pattern, inject_deviations
from .model_io import LogBundle, load_model, load_models, read_bundle, read_event_log, write_bundle

__version__ = "0.1.0"

__all__ = [
    "NO_DEVIATION", "PATTERN_KINDS", "DeviationPattern", "EventLog", "PatternKind", "ProcessModel",
    "Trace", "format_pattern", "format_patterns", "normalize_deviation", "pattern",
    "DetectionResult", "OutputParseError", "RagDeviationDetector", "detect_trace", "parse_output",
    "HashedNgramEmbedder", "aggregate_metrics", "descriptive_stats", "score_results", "score_trace",
    "KnowledgeBase", "build_kb", "load_kb", "save_kb",
    "DeviationInjector", "InjectionConfig", "apply_pattern", "inject_deviations",
    "LogBundle", "load_model", "load_models", "read_bundle", "read_event_log", "write_bundle",
]
