"""Exact multi-output GP inference with per-point, per-dimension noise."""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg
import scipy.optimize

from .lodegp import Hyperparameters, LodeGpModel

log = logging.getLogger(__name__)

JITTER = 1e-8
MAX_JITTER = 1e-4


class IllConditionedError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class DataPoint:
    t: float
    z: np.ndarray
    noise_var: np.ndarray

    def __post_init__(self):
        z = np.atleast_1d(np.asarray(self.z, float))
        nv = np.broadcast_to(np.asarray(self.noise_var, float), z.shape).copy()
        if np.any(nv < 0):
            raise ValueError("noise variances must be nonnegative")
        object.__setattr__(self, "t", float(self.t))
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "noise_var", nv)


@dataclass(frozen=True)
class Dataset:
    points: tuple[DataPoint, ...] = ()

    def __post_init__(self):
        # stable sort keeps insertion order for tied times
        object.__setattr__(self, "points", tuple(sorted(self.points, key=lambda p: p.t)))

    def __len__(self):
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    def __or__(self, other: "Dataset") -> "Dataset":
        return Dataset(self.points + other.points)

    @classmethod
    def union(cls, parts: Iterable["Dataset"]) -> "Dataset":
        return cls(tuple(p for d in parts for p in d.points))

    @property
    def times(self) -> np.ndarray:
        return np.array([p.t for p in self.points])

    @property
    def values(self) -> np.ndarray:
        return np.array([p.z for p in self.points])

    @property
    def noise(self) -> np.ndarray:
        return np.array([p.noise_var for p in self.points])

    def shifted(self, dt: float) -> "Dataset":
        return Dataset(tuple(DataPoint(p.t + dt, p.z, p.noise_var) for p in self.points))


def build_gram(model: LodeGpModel, data: Dataset, jitter: float = JITTER) -> np.ndarray:
    """Prior Gram matrix of the data plus noise; zero noise is lifted to ``jitter``."""
    if len(data) == 0:
        raise ValueError("empty dataset")
    K = model.gram(data.times)
    K = 0.5 * (K + K.T)
    K[np.diag_indices_from(K)] += np.maximum(data.noise.ravel(), jitter)
    return K


def _factor(model: LodeGpModel, data: Dataset):
    jitter = JITTER
    while True:
        K = build_gram(model, data, jitter)
        try:
            return scipy.linalg.cho_factor(K, lower=True, check_finite=True), jitter
        except (np.linalg.LinAlgError, ValueError):
            if jitter >= MAX_JITTER:
                raise IllConditionedError(
                    f"Gram matrix of {len(data)} points not factorizable with jitter up to {MAX_JITTER:g}"
                ) from None
            jitter *= 10
            log.debug("escalating jitter to %g", jitter)


def _residuals(model: LodeGpModel, data: Dataset) -> np.ndarray:
    return (data.values - model.mean_shift).ravel()


@dataclass(frozen=True)
class Posterior:
    model: LodeGpModel
    data: Dataset
    chol: tuple = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    jitter: float = JITTER

    @property
    def times(self) -> np.ndarray:
        return self.data.times

    def mean(self, ts) -> np.ndarray:
        """Posterior mean at each time in ``ts``, shape ``(len(ts), dz)``."""
        ts = np.atleast_1d(np.asarray(ts, float))
        Ks = self.model.gram(ts, self.times)
        return self.model.mean_shift + (Ks @ self.alpha).reshape(len(ts), self.model.dz)

    def cov(self, ts1, ts2) -> np.ndarray:
        ts1 = np.atleast_1d(np.asarray(ts1, float))
        ts2 = np.atleast_1d(np.asarray(ts2, float))
        K12 = self.model.gram(ts1, ts2)
        A = self.model.gram(ts1, self.times)
        B = self.model.gram(ts2, self.times)
        return K12 - A @ scipy.linalg.cho_solve(self.chol, B.T)


def condition(model: LodeGpModel, data: Dataset) -> Posterior:
    chol, jitter = _factor(model, data)
    alpha = scipy.linalg.cho_solve(chol, _residuals(model, data))
    return Posterior(model=model, data=data, chol=chol, alpha=alpha, jitter=jitter)


def posterior_mean(post: Posterior, t_star: float) -> np.ndarray:
    return post.mean([t_star])[0]


def posterior_cov(post: Posterior, t_star: float, t_star2: float) -> np.ndarray:
    return post.cov([t_star], [t_star2])


def log_marginal_likelihood(model: LodeGpModel, data: Dataset) -> float:
    """``-1/2 r^T K^-1 r - 1/2 log det K`` with residuals against the prior mean."""
    (L, low), _ = _factor(model, data)
    r = _residuals(model, data)
    alpha = scipy.linalg.cho_solve((L, low), r)
    return float(-0.5 * r @ alpha - np.sum(np.log(np.diag(L))))


def mll_gradient(model: LodeGpModel, data: Dataset) -> np.ndarray:
    """Analytic gradient of the MLL in ``(log sigma_f, log lengthscale)``."""
    chol, _ = _factor(model, data)
    r = _residuals(model, data)
    alpha = scipy.linalg.cho_solve(chol, r)
    Kinv = scipy.linalg.cho_solve(chol, np.eye(len(r)))
    inner = np.outer(alpha, alpha) - Kinv
    grads = []
    for wrt in ("log_sigma_f", "log_lengthscale"):
        b = model.cov_blocks(data.times, data.times, wrt=wrt)
        dK = b.reshape(len(r), len(r))
        grads.append(0.5 * np.sum(inner * dK))
    return np.array(grads)


@dataclass(frozen=True)
class OptimizerConfig:
    sigma_f_range: tuple[float, float] = (1e-3, 1e1)
    lengthscale_range: tuple[float, float] = (0.1, 100.0)
    grid_size: int = 5
    max_iter: int = 400
    xatol: float = 1e-6
    fatol: float = 1e-9
    simplex_step: float = 0.5  # initial simplex edge in log space


def _grid(lo_hi, n) -> np.ndarray:
    return np.linspace(math.log(lo_hi[0]), math.log(lo_hi[1]), n)


def optimize_hyperparameters(model: LodeGpModel, data: Dataset,
                             config: OptimizerConfig = OptimizerConfig()) -> Hyperparameters:
    """Maximize the MLL over ``(log sigma_f, log lengthscale)``.

    A log-spaced seed grid is scanned in lexicographic order (first strict
    improvement wins ties), then Nelder-Mead refines from the best seed. The
    refinement is confined to the grid box: for constraint datasets the MLL
    often keeps growing with the lengthscale, and an unbounded simplex would
    walk off to degenerate kernels.
    """
    if len(data) == 0:
        raise ValueError("cannot train on an empty dataset")

    def objective(v):
        try:
            val = log_marginal_likelihood(model.with_hyper(Hyperparameters.from_log(v)), data)
        except (np.linalg.LinAlgError, ValueError, OverflowError):
            return math.inf
        return -val if math.isfinite(val) else math.inf

    best, best_val = None, math.inf
    for ls in itertools.product(_grid(config.sigma_f_range, config.grid_size),
                                _grid(config.lengthscale_range, config.grid_size)):
        val = objective(np.array(ls))
        if val < best_val:
            best, best_val = np.array(ls), val
    if best is None:
        raise IllConditionedError("hyperparameter search: every seed failed to factorize")

    lo = np.log([config.sigma_f_range[0], config.lengthscale_range[0]])
    hi = np.log([config.sigma_f_range[1], config.lengthscale_range[1]])
    simplex = [best]
    for k in range(2):
        v = best.copy()
        # step inward when the seed sits on the upper edge
        v[k] += config.simplex_step if v[k] + config.simplex_step <= hi[k] else -config.simplex_step
        simplex.append(v)
    res = scipy.optimize.minimize(
        objective, best, method="Nelder-Mead", bounds=list(zip(lo, hi)),
        options={"maxiter": config.max_iter, "xatol": config.xatol, "fatol": config.fatol,
                 "initial_simplex": np.array(simplex)},
    )
    x = res.x if res.fun <= best_val else best
    hyper = Hyperparameters.from_log(x)
    log.info("trained hyperparameters sigma_f=%.4g lengthscale=%.4g (MLL %.6g)",
             hyper.sigma_f, hyper.lengthscale, -min(res.fun, best_val))
    return hyper
