"""Covariance functions whose sample paths solve ``H z = 0``.

The Smith form ``D = W H V`` decouples the system into scalar equations
``D_ii h_i = 0`` for a latent process ``h``. Each latent dimension gets a
kernel that respects its own equation, and ``z = V h`` pushes the latent GP
forward to the observed coordinates. The pushforward of a kernel through the
operator polynomials in ``V`` only needs mixed derivatives
``d^a/dt^a d^b/dt'^b k(t, t')`` of the latent kernels.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .linearize import LinearizedSystem, build_operator_matrix
from .polyalg import (
    OperatorMatrix,
    OperatorPoly,
    SmithDecomposition,
    count_real_roots,
    poly_gcd,
    rational_from_float,
    smith_normal_form,
)


class UnsupportedSystemError(ValueError):
    pass


class LatentKind(enum.Enum):
    ZERO = "zero"
    SE = "se"
    SOLUTION = "solution"


@dataclass(frozen=True)
class LatentEntry:
    kind: LatentKind
    roots: tuple[float, ...] = ()


LatentKernelSpec = tuple  # tuple[LatentEntry, ...], one per latent dimension


@dataclass(frozen=True)
class Hyperparameters:
    signal_variance: float
    lengthscale: float

    def __post_init__(self):
        if not (self.signal_variance > 0 and self.lengthscale > 0):
            raise ValueError(f"hyperparameters must be positive, got {self}")

    @property
    def sigma_f(self) -> float:
        return math.sqrt(self.signal_variance)

    def to_log(self) -> np.ndarray:
        """``(log sigma_f, log lengthscale)``."""
        return np.array([0.5 * math.log(self.signal_variance), math.log(self.lengthscale)])

    @classmethod
    def from_log(cls, v) -> "Hyperparameters":
        return cls(signal_variance=math.exp(2 * v[0]), lengthscale=math.exp(v[1]))


def _distinct_real_roots(p: OperatorPoly) -> tuple[float, ...]:
    q = p.monic()
    if poly_gcd(q, q.derivative()).degree >= 1:
        raise UnsupportedSystemError(f"diagonal entry {q} has repeated roots")
    if count_real_roots(q) != q.degree:
        raise UnsupportedSystemError(f"diagonal entry {q} has complex roots")
    approx = np.roots([float(c) for c in reversed(q.coeffs)]).real
    roots = []
    for r in sorted(approx):
        # Newton polish, then prefer an exact rational root when one is nearby
        for _ in range(3):
            d = q.derivative()(float(r))
            if d:
                r = r - q(float(r)) / d
        rq = rational_from_float(r, 10**6)
        roots.append(float(rq) if q(rq) == 0 else float(r))
    return tuple(roots)


def construct_latent_kernel(D: OperatorMatrix) -> LatentKernelSpec:
    """Kernel type per latent dimension from the diagonal of ``D``."""
    if not D.is_diagonal():
        raise ValueError("D must be diagonal")
    spec = []
    for i in range(D.cols):
        d = D[i, i] if i < D.rows else OperatorPoly()
        if d.is_zero():
            spec.append(LatentEntry(LatentKind.SE))
        elif d.is_constant():
            spec.append(LatentEntry(LatentKind.ZERO))
        else:
            try:
                spec.append(LatentEntry(LatentKind.SOLUTION, _distinct_real_roots(d)))
            except UnsupportedSystemError as e:
                raise UnsupportedSystemError(f"latent dimension {i}: {e}") from None
    return tuple(spec)


def hermite_values(n_max: int, x):
    """Physicists' Hermite polynomials ``H_0..H_n_max`` at ``x`` (stacked on axis 0)."""
    x = np.asarray(x, float)
    out = [np.ones_like(x)]
    if n_max >= 1:
        out.append(2 * x)
    for n in range(1, n_max):
        out.append(2 * x * out[n] - 2 * n * out[n - 1])
    return np.stack(out)


def se_derivatives(n_max: int, r, hyper: Hyperparameters) -> np.ndarray:
    """``d^n/dr^n k_SE(r)`` for ``n = 0..n_max``; shape ``(n_max+1,) + r.shape``."""
    r = np.asarray(r, float)
    s = 1.0 / (hyper.lengthscale * math.sqrt(2.0))
    base = hyper.signal_variance * np.exp(-(s * r) ** 2)
    herm = hermite_values(n_max, s * r)
    scale = (-s) ** np.arange(n_max + 1)
    return scale.reshape((-1,) + (1,) * r.ndim) * herm * base


def se_mixed_derivative(a: int, b: int, t: float, t2: float, hyper: Hyperparameters) -> float:
    """``d^a/dt^a d^b/dt2^b`` of the squared-exponential kernel at ``(t, t2)``."""
    if a < 0 or b < 0:
        raise ValueError("derivative orders must be nonnegative")
    return float((-1) ** b * se_derivatives(a + b, t - t2, hyper)[a + b])


@dataclass(frozen=True)
class LodeGpModel:
    """LODE-GP prior ``z ~ GP(mean_shift, V k V'^T)`` over stacked ``[x; u]``."""

    V: OperatorMatrix
    latent: LatentKernelSpec
    hyper: Hyperparameters
    mean_shift: np.ndarray
    state_dim: int
    control_dim: int
    A_e: np.ndarray | None = None
    B_e: np.ndarray | None = None
    smith: SmithDecomposition | None = field(default=None, compare=False, repr=False)
    # float coefficients of V per active latent dim: (d_z, max_degree + 1)
    _coef: tuple = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        dz = self.state_dim + self.control_dim
        if self.V.shape != (dz, dz) or len(self.latent) != dz:
            raise ValueError(f"V {self.V.shape} / latent {len(self.latent)} inconsistent with d_z={dz}")
        object.__setattr__(self, "mean_shift", np.asarray(self.mean_shift, float).reshape(dz))
        coef = []
        for m, entry in enumerate(self.latent):
            if entry.kind is LatentKind.ZERO:
                continue
            deg = max(0, max(self.V[i, m].degree for i in range(dz)))
            c = np.zeros((dz, deg + 1))
            for i in range(dz):
                for k, v in enumerate(self.V[i, m].coeffs):
                    c[i, k] = float(v)
            coef.append((m, entry, c))
        object.__setattr__(self, "_coef", tuple(coef))

    @property
    def dz(self) -> int:
        return self.state_dim + self.control_dim

    def with_hyper(self, hyper: Hyperparameters) -> "LodeGpModel":
        return LodeGpModel(self.V, self.latent, hyper, self.mean_shift, self.state_dim,
                           self.control_dim, self.A_e, self.B_e, self.smith)

    def delta(self) -> "LodeGpModel":
        """Same covariance with zero prior mean."""
        return LodeGpModel(self.V, self.latent, self.hyper, np.zeros(self.dz), self.state_dim,
                           self.control_dim, self.A_e, self.B_e, self.smith)

    def cov_blocks(self, t1, t2, wrt: str | None = None) -> np.ndarray:
        """Cross-covariance blocks, shape ``(len(t1), dz, len(t2), dz)``.

        With ``wrt="log_lengthscale"`` or ``"log_sigma_f"`` returns the
        derivative of the blocks with respect to that hyperparameter.
        """
        t1 = np.atleast_1d(np.asarray(t1, float))
        t2 = np.atleast_1d(np.asarray(t2, float))
        out = np.zeros((len(t1), self.dz, len(t2), self.dz))
        r = t1[:, None] - t2[None, :]
        for _, entry, c in self._coef:
            p = c.shape[1] - 1
            if entry.kind is LatentKind.SE:
                g = se_derivatives(2 * p + 1, r, self.hyper)
                if wrt == "log_lengthscale":
                    n = np.arange(2 * p + 1).reshape(-1, 1, 1)
                    g = -n * g[:-1] - r * g[1:]
                elif wrt == "log_sigma_f":
                    g = 2 * g[:-1]
                elif wrt is None:
                    g = g[:-1]
                else:
                    raise ValueError(f"unknown hyperparameter {wrt!r}")
                ab = np.add.outer(np.arange(p + 1), np.arange(p + 1))
                sign = (-1.0) ** np.arange(p + 1)
                out += np.einsum("ia,jb,abpq->piqj", c, c * sign, g[ab])
            elif wrt is None:
                for root in entry.roots:
                    pw = root ** np.arange(p + 1)
                    phi1 = (c @ pw)[None, :] * np.exp(root * t1)[:, None]
                    phi2 = (c @ pw)[None, :] * np.exp(root * t2)[:, None]
                    out += np.einsum("pi,qj->piqj", phi1, phi2)
        return out

    def gram(self, t1, t2=None) -> np.ndarray:
        """Stacked covariance matrix, point-major: row ``i*dz + d``."""
        b = self.cov_blocks(t1, t1 if t2 is None else t2)
        K = b.reshape(b.shape[0] * self.dz, b.shape[2] * self.dz)
        if t2 is None:
            # exact symmetry; the blocks agree with their transposes only to rounding
            K = 0.5 * (K + K.T)
        return K


def covariance(model: LodeGpModel, t: float, t2: float) -> np.ndarray:
    """``K(t, t2)``, a ``dz x dz`` matrix."""
    return model.cov_blocks([t], [t2])[0, :, 0, :]


def prior_mean(model: LodeGpModel, t: float) -> np.ndarray:
    return model.mean_shift.copy()


def normalize_free_columns(V: OperatorMatrix, D: OperatorMatrix) -> OperatorMatrix:
    """Rescale columns of ``V`` whose ``D`` column is zero.

    Such columns span the solution space of ``H z = 0`` and their scale is an
    artifact of the reduction. Each is divided by its largest constant
    coefficient (or largest coefficient if all constant terms vanish), which
    keeps ``W H V = D`` and unimodularity intact.
    """
    rows = V.to_rows()
    for m in range(V.cols):
        if m < D.rows and not D[m, m].is_zero():
            continue
        col = [rows[i][m] for i in range(V.rows)]
        consts = [abs(p.coeffs[0]) for p in col if p.coeffs]
        scale = max(consts, default=Fraction(0))
        if scale == 0:
            scale = max((abs(c) for p in col for c in p.coeffs), default=Fraction(0))
        if scale == 0:
            continue
        for i in range(V.rows):
            rows[i][m] = rows[i][m] * (1 / scale)
    return OperatorMatrix.from_rows(rows)


def build_lodegp_model(lin: LinearizedSystem, hyper: Hyperparameters,
                       max_denominator: int = 10**12) -> LodeGpModel:
    """Operator matrix, Smith form, latent kernel and pushforward for a linearization."""
    H = build_operator_matrix(lin.A_e, lin.B_e, max_denominator)
    snf = smith_normal_form(H)
    latent = construct_latent_kernel(snf.D)
    V = normalize_free_columns(snf.V, snf.D)
    return LodeGpModel(
        V=V,
        latent=latent,
        hyper=hyper,
        mean_shift=np.concatenate([lin.x_e, lin.u_e]),
        state_dim=lin.state_dim,
        control_dim=lin.control_dim,
        A_e=np.asarray(lin.A_e, float),
        B_e=np.asarray(lin.B_e, float),
        smith=SmithDecomposition(snf.D, snf.W, V),
    )


def ode_residual(model: LodeGpModel, trajectory_mean: Callable[[np.ndarray], np.ndarray],
                 grid: Sequence[float]) -> float:
    """Max-norm of ``dx/dt - A_e dx - B_e du`` on the interior of ``grid``.

    ``trajectory_mean`` maps an array of times to an ``(n, dz)`` array; the
    time derivative is a central difference on the grid.
    """
    grid = np.asarray(grid, float)
    if grid.size < 3:
        raise ValueError("ode_residual needs at least 3 grid points")
    if model.A_e is None or model.B_e is None:
        raise ValueError("model carries no linearization")
    z = np.asarray(trajectory_mean(grid), float) - model.mean_shift
    nx = model.state_dim
    xdot = (z[2:, :nx] - z[:-2, :nx]) / (grid[2:] - grid[:-2])[:, None]
    mid = z[1:-1]
    res = xdot - mid[:, :nx] @ model.A_e.T - mid[:, nx:] @ model.B_e.T
    return float(np.max(np.abs(res)))
