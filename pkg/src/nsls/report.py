"""Solve reports and coordinate-touch accounting shared by both solvers."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from typing import Any, Optional

import numpy as np


@dataclass
class CostMeter:
    """Running cost of a solve.

    ``step_touches`` sums the per-step touch counts of the sampled gradient
    estimates.  ``pass_touches`` sums ``2 * nnz`` over every full product with
    ``A^T A`` (gradients, residuals, power steps).  ``dense_ops`` counts O(d)
    vector work (materializing iterates, renormalizing) and is reported
    separately because it touches no matrix data.
    """

    inner_steps: int = 0
    step_touches: int = 0
    full_passes: int = 0
    pass_touches: int = 0
    dense_ops: int = 0
    epochs: int = 0

    def full_pass(self, nnz: int, count: int = 1) -> None:
        self.full_passes += count
        self.pass_touches += 2 * nnz * count

    @property
    def coordinate_touches(self) -> int:
        return self.step_touches + self.pass_touches

    def absorb(self, other: "CostMeter") -> None:
        for name in ("inner_steps", "step_touches", "full_passes", "pass_touches",
                     "dense_ops", "epochs"):
            setattr(self, name, getattr(self, name) + getattr(other, name))


def _jsonable(v: Any) -> Any:
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return [_jsonable(x) for x in v.tolist()]
    if isinstance(v, (np.floating,)):
        v = float(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, float) and not np.isfinite(v):
        return None
    return v


@dataclass
class SolveReport:
    converged: bool
    epochs: int
    inner_steps: int
    coordinate_touches: int
    full_gradient_evals: int
    final_metrics: dict = field(default_factory=dict)
    clamps_and_warnings: list = field(default_factory=list)
    wall_time_ms: float = 0.0
    config: dict = field(default_factory=dict)
    touch_breakdown: dict = field(default_factory=dict)
    trace: list = field(default_factory=list)
    status: str = "ok"

    @classmethod
    def from_meter(cls, meter: CostMeter, converged: bool, **kw) -> "SolveReport":
        return cls(converged=converged, epochs=meter.epochs, inner_steps=meter.inner_steps,
                   coordinate_touches=meter.coordinate_touches,
                   full_gradient_evals=meter.full_passes,
                   touch_breakdown={"inner_step_touches": meter.step_touches,
                                    "full_pass_touches": meter.pass_touches,
                                    "dense_ops": meter.dense_ops},
                   **kw)

    def to_dict(self, include_wall_time: bool = True) -> dict:
        d = _jsonable(asdict(self))
        if not include_wall_time:
            d.pop("wall_time_ms")
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(**kw), indent=2, sort_keys=True)


class Stopwatch:
    def __init__(self):
        self.t0 = time.perf_counter()

    def ms(self) -> float:
        return (time.perf_counter() - self.t0) * 1e3
