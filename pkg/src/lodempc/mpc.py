"""Receding-horizon control by conditioning a LODE-GP on constraint data.

Every sample the controller builds a dataset from the measured state (a
jitter-level pin at relative time 0), box constraints encoded as noisy
pseudo-observations, and optionally an endpoint pin at the reference time. The
control read off the posterior mean one sample ahead is applied to the plant.
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .gp import JITTER, DataPoint, Dataset, condition
from .linearize import NonlinearSystem
from .lodegp import LodeGpModel
from .plant import IntegrationError, simulate_hold

log = logging.getLogger(__name__)


class PlantDomainError(RuntimeError):
    def __init__(self, msg, trace):
        super().__init__(msg)
        self.trace = trace


@dataclass(frozen=True)
class BoxConstraints:
    z_min: np.ndarray
    z_max: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.z_min, float)
        hi = np.asarray(self.z_max, float)
        if lo.shape != hi.shape or np.any(lo > hi):
            raise ValueError(f"invalid box [{lo}, {hi}]")
        object.__setattr__(self, "z_min", lo)
        object.__setattr__(self, "z_max", hi)

    @classmethod
    def band(cls, center, fraction: float) -> "BoxConstraints":
        """``[(1 - fraction) * center, (1 + fraction) * center]`` componentwise."""
        c = np.asarray(center, float)
        a, b = (1 - fraction) * c, (1 + fraction) * c
        return cls(np.minimum(a, b), np.maximum(a, b))


class ConstraintMode(enum.Enum):
    PHYSICAL_BOX = "physical"
    REFERENCE_BAND = "band"


@dataclass(frozen=True)
class MpcConfig:
    z_ref: np.ndarray
    box: BoxConstraints
    horizon: float = 10.0
    n_constraint_points: int = 10
    first_constraint_time: float = 1.0
    dt: float = 1.0
    t_ref: Optional[float] = None
    constraint_mode: ConstraintMode = ConstraintMode.PHYSICAL_BOX
    band_fraction: float = 0.1
    use_endpoint: bool = False
    post_ref_hold: bool = True

    def __post_init__(self):
        object.__setattr__(self, "z_ref", np.asarray(self.z_ref, float))
        if self.dt <= 0 or self.n_constraint_points < 1:
            raise ValueError("need dt > 0 and at least one constraint point")
        if self.use_endpoint and not (self.t_ref is not None and self.t_ref > 0):
            raise ValueError("use_endpoint requires t_ref > 0")

    def constraint_box(self) -> BoxConstraints:
        if self.constraint_mode is ConstraintMode.REFERENCE_BAND:
            return BoxConstraints.band(self.z_ref, self.band_fraction)
        return self.box

    def constraint_times(self) -> np.ndarray:
        return np.linspace(self.first_constraint_time, self.horizon, self.n_constraint_points)


def make_soft_constraints(box: BoxConstraints, times) -> Dataset:
    """Box midpoint as observation with a quarter of the box width as noise variance."""
    z = (box.z_max + box.z_min) / 2
    var = (box.z_max - box.z_min) / 4
    return Dataset(tuple(DataPoint(t, z, var) for t in times))


def make_init_point(t0: float, x0, u_prev) -> Dataset:
    z = np.concatenate([np.atleast_1d(x0), np.atleast_1d(u_prev)]).astype(float)
    return Dataset((DataPoint(t0, z, np.full(z.shape, JITTER)),))


def make_endpoint(t_ref: float, z_ref) -> Dataset:
    z = np.asarray(z_ref, float)
    return Dataset((DataPoint(t_ref, z, np.zeros(z.shape)),))


@dataclass
class ControllerState:
    model: LodeGpModel
    config: MpcConfig
    t: float = 0.0
    u_prev: np.ndarray = None
    u_raw: np.ndarray = None
    clamp_count: int = 0

    def __post_init__(self):
        if self.u_prev is None:
            self.u_prev = self.model.mean_shift[self.model.state_dim:].copy()
        self.u_prev = np.atleast_1d(np.asarray(self.u_prev, float))

    @property
    def u_e(self) -> np.ndarray:
        return self.config.z_ref[self.model.state_dim:]

    def in_hold_phase(self) -> bool:
        c = self.config
        return c.use_endpoint and c.post_ref_hold and self.t >= c.t_ref


def assemble_dataset(state: ControllerState, x_measured) -> Dataset:
    """Init pin, soft constraints and (before the reference time) the endpoint, in relative time."""
    c = state.config
    parts = [
        make_init_point(0.0, x_measured, state.u_prev),
        make_soft_constraints(c.constraint_box(), c.constraint_times()),
    ]
    if c.use_endpoint and c.t_ref - state.t > 0:
        parts.append(make_endpoint(c.t_ref - state.t, c.z_ref))
    return Dataset.union(parts)


def mpc_step(state: ControllerState, x_measured) -> np.ndarray:
    """Control to apply for the next sample; advances ``state`` by ``dt``."""
    nx = state.model.state_dim
    box = state.config.box
    if state.in_hold_phase():
        raw = state.u_e.copy()
    else:
        post = condition(state.model, assemble_dataset(state, x_measured))
        raw = post.mean([state.config.dt])[0, nx:]
    u = np.clip(raw, box.z_min[nx:], box.z_max[nx:])
    if np.any(u != raw):
        state.clamp_count += 1
        # warn once per controller, the run summary reports the total
        log.log(logging.WARNING if state.clamp_count == 1 else logging.DEBUG,
                "t=%.1f: control %s clamped to %s", state.t, raw, u)
    state.u_raw = raw
    state.u_prev = u
    state.t += state.config.dt
    return u


@dataclass
class ClosedLoopTrace:
    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    u_raw: np.ndarray
    plant_clamps: int = 0
    control_clamps: int = 0

    def __len__(self):
        return len(self.t)


def _trace(rows, plant_clamps, control_clamps) -> ClosedLoopTrace:
    t, x, u, ur = zip(*rows) if rows else ((), (), (), ())
    return ClosedLoopTrace(np.array(t), np.array(x), np.array(u), np.array(ur),
                           plant_clamps, control_clamps)


def run_closed_loop(plant: NonlinearSystem, controller: ControllerState, x0, T_total: float,
                    substep: float = 0.01) -> ClosedLoopTrace:
    """Measure, act, integrate for one sample, repeat; ``floor(T_total/dt) + 1`` records."""
    dt = controller.config.dt
    n = int(math.floor(T_total / dt + 1e-9)) + 1
    x = np.asarray(x0, float).copy()
    rows, plant_clamps = [], 0
    for k in range(n):
        t = k * dt
        controller.t = t
        u = mpc_step(controller, x)
        rows.append((t, x.copy(), u.copy(), controller.u_raw.copy()))
        if k == n - 1:
            break
        try:
            nxt = simulate_hold(plant, x, u, dt, h=substep, t0=t)
        except (IntegrationError, ValueError) as exc:
            # the right-hand side failed somewhere inside the sample
            raise PlantDomainError(f"plant integration failed in [{t}, {t + dt}]: {exc}",
                                   _trace(rows, plant_clamps, controller.clamp_count)) from exc
        plant_clamps += nxt.clamp_count
        if not (np.all(np.isfinite(nxt.x)) and plant.in_domain(nxt.x)):
            raise PlantDomainError(f"plant state {nxt.x} left its domain at t={t + dt}",
                                   _trace(rows, plant_clamps, controller.clamp_count))
        x = nxt.x
    if controller.clamp_count:
        log.warning("control clamped in %d of %d samples", controller.clamp_count, n)
    return _trace(rows, plant_clamps, controller.clamp_count)
