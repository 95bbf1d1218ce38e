"""Equilibria, Jacobian linearization and the homogeneous operator matrix."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional

import numpy as np

from .polyalg import (
    DEFAULT_MAX_DENOMINATOR,
    OperatorMatrix,
    OperatorPoly,
    count_real_roots,
    poly_gcd,
    rational_from_float,
)

log = logging.getLogger(__name__)

EQUILIBRIUM_TOL = 1e-10


class LinearizationError(RuntimeError):
    pass


class ConvergenceError(LinearizationError):
    def __init__(self, msg, residual):
        super().__init__(msg)
        self.residual = residual


class MarginalStabilityError(LinearizationError):
    """Characteristic polynomial has a root on the imaginary axis."""


@dataclass(frozen=True)
class NonlinearSystem:
    """``xdot = rhs(x, u)`` with optional analytic Jacobians and a box-shaped state domain."""

    state_dim: int
    control_dim: int
    rhs: Callable[[np.ndarray, np.ndarray], np.ndarray]
    analytic_jacobians: Optional[Callable[[np.ndarray, np.ndarray], tuple]] = None
    state_lower: Optional[np.ndarray] = None
    state_upper: Optional[np.ndarray] = None
    name: str = field(default="system", compare=False)

    def __call__(self, x, u) -> np.ndarray:
        out = np.asarray(self.rhs(np.asarray(x, float), np.asarray(u, float)), dtype=float)
        if out.shape != (self.state_dim,):
            raise ValueError(f"{self.name}: rhs returned shape {out.shape}, expected ({self.state_dim},)")
        return out

    def in_domain(self, x) -> bool:
        x = np.asarray(x, float)
        if self.state_lower is not None and np.any(x < self.state_lower):
            return False
        if self.state_upper is not None and np.any(x > self.state_upper):
            return False
        return True

    def clip(self, x) -> np.ndarray:
        lo = -np.inf if self.state_lower is None else self.state_lower
        hi = np.inf if self.state_upper is None else self.state_upper
        return np.clip(x, lo, hi)


@dataclass(frozen=True)
class LinearizedSystem:
    x_e: np.ndarray
    u_e: np.ndarray
    A_e: np.ndarray
    B_e: np.ndarray
    asymptotically_stable: bool

    @property
    def state_dim(self) -> int:
        return len(self.x_e)

    @property
    def control_dim(self) -> int:
        return len(self.u_e)


def find_equilibrium(sys: NonlinearSystem, u_e, x_guess, tol: float = EQUILIBRIUM_TOL,
                     max_iter: int = 100, max_halvings: int = 30) -> np.ndarray:
    """Damped Newton iteration on ``x -> rhs(x, u_e)``.

    The step is halved (up to ``max_halvings`` times) until the residual
    infinity-norm decreases and the iterate stays in the state domain. With
    several equilibria the guess selects the branch. Once the residual is
    within ``tol`` one more full step is tried and kept if it helps, which
    costs one Jacobian and, with quadratic convergence, usually lands on the
    root to rounding.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    u_e = np.atleast_1d(np.asarray(u_e, float))
    x = np.atleast_1d(np.array(x_guess, float))
    if not sys.in_domain(x):
        raise ValueError(f"initial guess {x} outside the state domain of {sys.name}")

    res = sys(x, u_e)
    nres = np.max(np.abs(res))
    for it in range(max_iter):
        if nres <= tol:
            return _polish(sys, x, u_e, nres)
        J, _ = jacobians(sys, x, u_e)
        try:
            if np.linalg.cond(J) > 1e14:
                raise np.linalg.LinAlgError
            step = np.linalg.solve(J, -res)
        except np.linalg.LinAlgError:
            raise LinearizationError(f"singular Jacobian at Newton iterate {x} (iteration {it})") from None
        lam = 1.0
        for _ in range(max_halvings + 1):
            cand = x + lam * step
            if sys.in_domain(cand):
                cres = sys(cand, u_e)
                ncand = np.max(np.abs(cres))
                if np.isfinite(ncand) and ncand < nres:
                    break
            lam *= 0.5
        else:
            raise ConvergenceError(
                f"line search failed at iterate {x}; residual {nres:.3e}", nres)
        x, res, nres = cand, cres, ncand
    if nres <= tol:
        return _polish(sys, x, u_e, nres)
    raise ConvergenceError(f"no convergence in {max_iter} iterations; residual {nres:.3e}", nres)


def _polish(sys, x, u_e, nres):
    if nres == 0:
        return x
    J, _ = jacobians(sys, x, u_e)
    try:
        cand = x + np.linalg.solve(J, -sys(x, u_e))
    except np.linalg.LinAlgError:
        return x
    if sys.in_domain(cand) and np.max(np.abs(sys(cand, u_e))) < nres:
        return cand
    return x


def _fd_step(v: np.ndarray) -> np.ndarray:
    return np.maximum(1e-6, 1e-6 * np.abs(v))


def jacobians(sys: NonlinearSystem, x_e, u_e) -> tuple[np.ndarray, np.ndarray]:
    """``(df/dx, df/du)`` at ``(x_e, u_e)``: analytic when supplied, else central differences."""
    x_e = np.atleast_1d(np.asarray(x_e, float))
    u_e = np.atleast_1d(np.asarray(u_e, float))
    if sys.analytic_jacobians is not None:
        A, B = sys.analytic_jacobians(x_e, u_e)
        A = np.asarray(A, float).reshape(sys.state_dim, sys.state_dim)
        B = np.asarray(B, float).reshape(sys.state_dim, sys.control_dim)
    else:
        A = _central_diff(lambda v: sys(v, u_e), x_e)
        B = _central_diff(lambda v: sys(x_e, v), u_e)
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
        raise LinearizationError(f"non-finite Jacobian at x={x_e}, u={u_e}; point is not differentiable")
    return A, B


def _central_diff(fun, v: np.ndarray) -> np.ndarray:
    h = _fd_step(v)
    cols = []
    for i in range(len(v)):
        e = np.zeros_like(v)
        e[i] = h[i]
        with np.errstate(all="ignore"):
            cols.append((fun(v + e) - fun(v - e)) / (2 * h[i]))
    return np.column_stack(cols)


def charpoly(A) -> list[Fraction]:
    """Characteristic polynomial coefficients, highest power first, by Faddeev-LeVerrier.

    Runs in exact rational arithmetic on the rationalized entries.
    """
    A = np.atleast_2d(np.asarray(A, float))
    n = A.shape[0]
    Aq = [[rational_from_float(v, DEFAULT_MAX_DENOMINATOR) for v in row] for row in A]

    def matmul(X, Y):
        return [[sum(X[i][k] * Y[k][j] for k in range(n)) for j in range(n)] for i in range(n)]

    coeffs = [Fraction(1)]
    M = [[Fraction(0)] * n for _ in range(n)]
    for k in range(1, n + 1):
        M = matmul(Aq, M)
        for i in range(n):
            M[i][i] += coeffs[-1]
        AM = matmul(Aq, M)
        coeffs.append(-sum(AM[i][i] for i in range(n)) / k)
    return coeffs


def _imaginary_axis_root(c: list[Fraction]) -> bool:
    """True if ``sum c[k] s**(n-k)`` vanishes at some ``s = j*w`` with real ``w``."""
    n = len(c) - 1
    re = [Fraction(0)] * (n + 1)
    im = [Fraction(0)] * (n + 1)
    for k, ck in enumerate(c):
        m = n - k
        # (j w)^m = j^m w^m
        if m % 2 == 0:
            re[m] += ck * (-1) ** (m // 2)
        else:
            im[m] += ck * (-1) ** ((m - 1) // 2)
    g = poly_gcd(OperatorPoly(tuple(re)), OperatorPoly(tuple(im)))
    return g.degree >= 1 and count_real_roots(g) > 0


def check_asymptotic_stability(A_e, tol: float = 1e-12) -> bool:
    """Routh-Hurwitz test on the exact characteristic polynomial of ``A_e``.

    Raises :class:`MarginalStabilityError` when a root lies on the imaginary
    axis, or when a Routh pivot is zero to within ``tol`` relative to the
    largest coefficient.
    """
    c = charpoly(A_e)
    n = len(c) - 1
    if n < 1:
        raise ValueError("need a matrix of size >= 1")
    if _imaginary_axis_root(c):
        raise MarginalStabilityError(f"characteristic polynomial {[float(v) for v in c]} has imaginary-axis roots")
    zero = Fraction(tol) * max(abs(v) for v in c)
    width = n // 2 + 1
    r0 = c[0::2] + [Fraction(0)] * (width - len(c[0::2]))
    r1 = c[1::2] + [Fraction(0)] * (width - len(c[1::2]))
    first = [r0[0], r1[0]]
    for _ in range(2, n + 1):
        if r1[0] == 0:
            return False
        if abs(r1[0]) <= zero:
            raise MarginalStabilityError(f"near-zero Routh pivot {float(r1[0]):.3e}; stability is indeterminate")
        r2 = [(r1[0] * r0[j + 1] - r0[0] * r1[j + 1]) / r1[0] for j in range(width - 1)] + [Fraction(0)]
        first.append(r2[0])
        r0, r1 = r1, r2
    if 0 < abs(first[-1]) <= zero:
        raise MarginalStabilityError(f"near-zero Routh pivot {float(first[-1]):.3e}; stability is indeterminate")
    return all(v > 0 for v in first) or all(v < 0 for v in first)


def build_operator_matrix(A_e, B_e, max_denominator: int = DEFAULT_MAX_DENOMINATOR) -> OperatorMatrix:
    """``H = [A_e - I*dt | B_e]`` as an exact operator matrix."""
    A_e = np.atleast_2d(np.asarray(A_e, float))
    B_e = np.asarray(B_e, float)
    if B_e.ndim == 1:
        B_e = B_e.reshape(-1, 1)
    nx = A_e.shape[0]
    if A_e.shape != (nx, nx) or B_e.shape[0] != nx:
        raise ValueError(f"incompatible shapes A{A_e.shape}, B{B_e.shape}")
    dt = OperatorPoly.dt()
    rows = []
    for i in range(nx):
        row = []
        for j in range(nx):
            e = OperatorPoly.const(rational_from_float(A_e[i, j], max_denominator))
            row.append(e - dt if i == j else e)
        row.extend(OperatorPoly.const(rational_from_float(b, max_denominator)) for b in B_e[i])
        rows.append(row)
    return OperatorMatrix.from_rows(rows)


def linearize(sys: NonlinearSystem, u_e, x_guess, tol: float = EQUILIBRIUM_TOL) -> LinearizedSystem:
    """Equilibrium for ``u_e``, Jacobians there, and a stability verdict."""
    u_e = np.atleast_1d(np.asarray(u_e, float))
    x_e = find_equilibrium(sys, u_e, x_guess, tol=tol)
    A, B = jacobians(sys, x_e, u_e)
    stable = check_asymptotic_stability(A)
    if not stable:
        log.warning("equilibrium %s of %s is not asymptotically stable", x_e, sys.name)
    return LinearizedSystem(x_e=x_e, u_e=u_e, A_e=A, B_e=B, asymptotically_stable=stable)
