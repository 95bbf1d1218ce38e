"""Nonlinear two-tank plant and a fixed-step RK4 integrator."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .linearize import NonlinearSystem


class IntegrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class TwoTankParams:
    A: float = 0.015  # tank cross-section, m^2
    u1_max: float = 2e-4  # pump limit, m^3/s
    c12: float = 2.5e-5  # valve V12, m^2
    c2R: float = 2.5e-5  # valve V2R, m^2
    g: float = 9.81

    def __post_init__(self):
        for name in ("A", "u1_max", "c12", "c2R", "g"):
            if not getattr(self, name) > 0:
                raise ValueError(f"TwoTankParams.{name} must be strictly positive")


def coupling_flow(x1: float, x2: float, p: TwoTankParams) -> float:
    d = x1 - x2
    return p.c12 * math.copysign(math.sqrt(2 * p.g * abs(d)), d) if d else 0.0


def two_tank_rhs(x, u, p: TwoTankParams = TwoTankParams()) -> np.ndarray:
    x1, x2 = float(x[0]), float(x[1])
    if x1 < 0 or x2 < 0:
        raise ValueError(f"negative tank level {x1, x2}; clamp before evaluating")
    q = coupling_flow(x1, x2, p)
    out = p.c2R * math.sqrt(2 * p.g * x2)
    return np.array([(float(u[0]) - q) / p.A, (q - out) / p.A])


def two_tank_jacobians(x, u, p: TwoTankParams = TwoTankParams()):
    """Analytic ``(A, B)``; undefined (infinite) at ``x1 == x2`` or ``x2 == 0``."""
    x1, x2 = float(x[0]), float(x[1])
    with np.errstate(divide="ignore"):
        a = np.float64(p.c12 / p.A * p.g) / np.sqrt(2 * p.g * abs(x1 - x2))
        b = np.float64(p.c2R / p.A * p.g) / np.sqrt(2 * p.g * x2)
    A = np.array([[-a, a], [a, -a - b]])
    B = np.array([[1 / p.A], [0.0]])
    return A, B


def two_tank_equilibrium(u_e: float, p: TwoTankParams = TwoTankParams()) -> np.ndarray:
    """Closed-form equilibrium levels: inflow equals both valve flows."""
    x2 = u_e**2 / (2 * p.g * p.c2R**2)
    x1 = x2 + u_e**2 / (2 * p.g * p.c12**2)
    return np.array([x1, x2])


def two_tank_system(p: TwoTankParams = TwoTankParams(), analytic: bool = True) -> NonlinearSystem:
    return NonlinearSystem(
        state_dim=2,
        control_dim=1,
        rhs=lambda x, u: two_tank_rhs(x, u, p),
        analytic_jacobians=(lambda x, u: two_tank_jacobians(x, u, p)) if analytic else None,
        state_lower=np.zeros(2),
        name="two-tank",
    )


@dataclass
class PlantState:
    x: np.ndarray
    t: float = 0.0
    clamp_count: int = field(default=0)


def _rk4_unclipped(sys: NonlinearSystem, x, u, h: float) -> np.ndarray:
    if h <= 0:
        raise ValueError("step size must be positive")
    x = np.asarray(x, float)
    k1 = sys(x, u)
    k2 = sys(sys.clip(x + 0.5 * h * k1), u)
    k3 = sys(sys.clip(x + 0.5 * h * k2), u)
    k4 = sys(sys.clip(x + h * k3), u)
    nxt = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    if not np.all(np.isfinite(nxt)):
        raise IntegrationError(f"non-finite state after RK4 step from {x} with u={u}")
    return nxt


def rk4_step(sys: NonlinearSystem, x, u, h: float) -> np.ndarray:
    """One classical RK4 step with ``u`` held constant, clipped to the state domain."""
    return sys.clip(_rk4_unclipped(sys, x, u, h))


def simulate_hold(sys: NonlinearSystem, x0, u, duration: float, h: float = 0.01,
                  t0: float = 0.0) -> PlantState:
    """Integrate under zero-order hold for ``duration`` seconds."""
    if duration < 0:
        raise ValueError("duration must be nonnegative")
    u = np.atleast_1d(np.asarray(u, float))
    x = np.asarray(x0, float).copy()
    n_full = int(math.floor(duration / h + 1e-9))
    rest = duration - n_full * h
    clamps = 0
    steps = [h] * n_full
    if rest > 1e-12 * max(1.0, duration):
        steps.append(rest)
    for hk in steps:
        raw = _rk4_unclipped(sys, x, u, hk)
        x = sys.clip(raw)
        clamps += bool(np.any(x != raw))
    return PlantState(x=x, t=t0 + duration, clamp_count=clamps)
