"""Closed-loop performance metrics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mpc import BoxConstraints, ClosedLoopTrace


def _require(trace: ClosedLoopTrace):
    if len(trace) == 0:
        raise ValueError("empty trace")


def control_error(trace: ClosedLoopTrace, x_ref) -> float:
    """Mean over samples of the squared state deviation, summed over states."""
    _require(trace)
    dev = np.asarray(trace.x, float) - np.asarray(x_ref, float)
    return float(np.mean(np.sum(dev**2, axis=1)))


def mean_control_input(trace: ClosedLoopTrace, raw: bool = False) -> float:
    """Mean Euclidean norm of the applied (or, with ``raw``, posterior) controls."""
    _require(trace)
    u = np.asarray(trace.u_raw if raw else trace.u, float)
    return float(np.mean(np.linalg.norm(u, axis=1)))


def constraint_violation(trace: ClosedLoopTrace, box: BoxConstraints) -> float:
    """Mean over samples of the summed one-sided excesses of ``[x; u_raw]`` outside ``box``."""
    _require(trace)
    z = np.hstack([np.asarray(trace.x, float), np.asarray(trace.u_raw, float)])
    over = np.maximum(z - box.z_max, 0) + np.maximum(box.z_min - z, 0)
    return float(np.mean(np.sum(over, axis=1)))


@dataclass(frozen=True)
class MetricsReport:
    model: str
    control_error: float
    mean_control_input: float
    constraint_violation: float

    def __post_init__(self):
        for name in ("control_error", "mean_control_input", "constraint_violation"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be nonnegative")


def evaluate(trace: ClosedLoopTrace, x_ref, box: BoxConstraints, model: str = "") -> MetricsReport:
    return MetricsReport(
        model=model,
        control_error=control_error(trace, x_ref),
        mean_control_input=mean_control_input(trace),
        constraint_violation=constraint_violation(trace, box),
    )
