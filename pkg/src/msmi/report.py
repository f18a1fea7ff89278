"""Estimator output records and their JSON form."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np

SCHEMA_VERSION = 1
MAX_TRACE = 1000


def to_jsonable(obj: Any) -> Any:
    """Recursively convert numpy containers and scalars to JSON types."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    return obj


@dataclass
class EstimateReport:
    method: str
    value_nats: float
    seed: int | None = None
    slices: tuple[np.ndarray, np.ndarray] | None = None
    train_history: list[float] = field(default_factory=list)
    eval_value: float | None = None
    wall_time_s: float = 0.0
    config: dict[str, Any] = field(default_factory=dict)
    extras: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "schema": SCHEMA_VERSION,
            "method": self.method,
            "value_nats": self.value_nats,
            "seed": self.seed,
            "config": self.config,
            "wall_time": self.wall_time_s,
        }
        if self.eval_value is not None:
            out["eval_value"] = self.eval_value
        if self.slices is not None:
            out["slices"] = {"a": self.slices[0], "b": self.slices[1]}
        if self.train_history:
            out["train_history"] = self.train_history[:MAX_TRACE]
        for key, val in self.extras.items():
            if isinstance(val, (list, tuple)) and len(val) > MAX_TRACE:
                val = list(val[:MAX_TRACE])
            out[key] = val
        return to_jsonable(out)

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)
