"""Input checks shared by the estimators."""
from __future__ import annotations

from typing import Iterable, List

from .core import EventLog, ProcessModel


def check_models(models: Iterable[ProcessModel]) -> List[ProcessModel]:
    """Materialize ``models`` and reject empty, mistyped or duplicate-id input."""
    if isinstance(models, ProcessModel):
        models = [models]
    models = list(models)
    if not models:
        raise ValueError("expected at least one process model")
    bad = [type(m).__name__ for m in models if not isinstance(m, ProcessModel)]
    if bad:
        raise TypeError(f"expected ProcessModel instances, got {bad[0]}")
    ids = [m.id for m in models]
    if len(set(ids)) != len(ids):
        raise ValueError("process model ids must be unique")
    return models


def check_model(model) -> ProcessModel:
    if not isinstance(model, ProcessModel):
        raise TypeError(f"expected a ProcessModel, got {type(model).__name__}")
    return model


def check_log(log) -> EventLog:
    if not isinstance(log, EventLog):
        raise TypeError(f"expected an EventLog, got {type(log).__name__}")
    if len(log) == 0:
        raise ValueError("event log has no traces")
    return log


def check_probability(name: str, value: float) -> float:
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value}")
    return float(value)
