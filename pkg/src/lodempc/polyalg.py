"""Exact arithmetic for constant-coefficient differential operators.

An :class:`OperatorPoly` is a univariate polynomial in the time-derivative
operator ``dt`` with :class:`fractions.Fraction` coefficients. Because the
coefficients are constant the operators commute, so the ring is an ordinary
Euclidean polynomial ring and matrices over it admit a Smith normal form
``D = W @ H @ V`` with unimodular ``W`` and ``V``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from numbers import Rational as _RationalABC
from typing import Iterable, Sequence

Rational = Fraction

DEFAULT_MAX_DENOMINATOR = 10**12


def rational_from_float(x: float, max_denominator: int = DEFAULT_MAX_DENOMINATOR) -> Fraction:
    """Best rational approximation of ``x`` with denominator <= ``max_denominator``.

    Uses the continued-fraction expansion of the exact binary value of ``x``.
    """
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"cannot convert non-finite value {x!r} to a rational")
    if max_denominator < 1:
        raise ValueError("max_denominator must be >= 1")
    return Fraction(x).limit_denominator(max_denominator)


def _as_fraction(c) -> Fraction:
    if isinstance(c, Fraction):
        return c
    if isinstance(c, (int, _RationalABC)):
        return Fraction(c)
    return rational_from_float(c)


def _strip(coeffs: Iterable[Fraction]) -> tuple[Fraction, ...]:
    out = list(coeffs)
    while out and out[-1] == 0:
        out.pop()
    return tuple(out)


@dataclass(frozen=True)
class OperatorPoly:
    """Polynomial ``sum_i coeffs[i] * dt**i``; the zero polynomial has no coefficients."""

    coeffs: tuple[Fraction, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "coeffs", _strip(_as_fraction(c) for c in self.coeffs))

    @classmethod
    def const(cls, c) -> "OperatorPoly":
        return cls((c,))

    @classmethod
    def dt(cls, power: int = 1) -> "OperatorPoly":
        return cls((0,) * power + (1,))

    @property
    def degree(self) -> int:
        """Degree; ``-1`` for the zero polynomial."""
        return len(self.coeffs) - 1

    def is_zero(self) -> bool:
        return not self.coeffs

    def is_constant(self) -> bool:
        return self.degree <= 0

    @property
    def lead(self) -> Fraction:
        return self.coeffs[-1] if self.coeffs else Fraction(0)

    def monic(self) -> "OperatorPoly":
        if self.is_zero():
            return self
        lc = self.lead
        return OperatorPoly(tuple(c / lc for c in self.coeffs))

    def derivative(self) -> "OperatorPoly":
        return OperatorPoly(tuple(i * c for i, c in enumerate(self.coeffs))[1:])

    def __call__(self, x):
        """Evaluate with Horner's rule; exact for Fraction/int arguments."""
        acc = Fraction(0) if isinstance(x, (int, Fraction)) else 0.0
        for c in reversed(self.coeffs):
            acc = acc * x + (c if isinstance(acc, Fraction) else float(c))
        return acc

    def __add__(self, other):
        return poly_add(self, _coerce(other))

    __radd__ = __add__

    def __neg__(self):
        return OperatorPoly(tuple(-c for c in self.coeffs))

    def __sub__(self, other):
        return poly_add(self, -_coerce(other))

    def __rsub__(self, other):
        return poly_add(_coerce(other), -self)

    def __mul__(self, other):
        return poly_mul(self, _coerce(other))

    __rmul__ = __mul__

    def __divmod__(self, other):
        return poly_divmod(self, _coerce(other))

    def __floordiv__(self, other):
        return poly_divmod(self, _coerce(other))[0]

    def __mod__(self, other):
        return poly_divmod(self, _coerce(other))[1]

    def __bool__(self):
        return bool(self.coeffs)

    def __str__(self):
        return format_poly(self)

    def __repr__(self):
        return f"OperatorPoly({format_poly(self)!r})"


ZERO = OperatorPoly()
ONE = OperatorPoly((1,))


def _coerce(p) -> OperatorPoly:
    return p if isinstance(p, OperatorPoly) else OperatorPoly.const(p)


def poly_add(a: OperatorPoly, b: OperatorPoly) -> OperatorPoly:
    n = max(len(a.coeffs), len(b.coeffs))
    ca = a.coeffs + (Fraction(0),) * (n - len(a.coeffs))
    cb = b.coeffs + (Fraction(0),) * (n - len(b.coeffs))
    return OperatorPoly(tuple(x + y for x, y in zip(ca, cb)))


def poly_mul(a: OperatorPoly, b: OperatorPoly) -> OperatorPoly:
    if a.is_zero() or b.is_zero():
        return ZERO
    out = [Fraction(0)] * (len(a.coeffs) + len(b.coeffs) - 1)
    for i, x in enumerate(a.coeffs):
        if x == 0:
            continue
        for j, y in enumerate(b.coeffs):
            out[i + j] += x * y
    return OperatorPoly(tuple(out))


def poly_divmod(a: OperatorPoly, b: OperatorPoly) -> tuple[OperatorPoly, OperatorPoly]:
    """Euclidean division ``a = q*b + r`` with ``deg r < deg b``."""
    if b.is_zero():
        raise ZeroDivisionError("division by the zero polynomial")
    rem = list(a.coeffs)
    db = b.degree
    lb = b.lead
    if len(rem) - 1 < db:
        return ZERO, a
    quot = [Fraction(0)] * (len(rem) - db)
    for k in range(len(rem) - 1 - db, -1, -1):
        c = rem[k + db] / lb
        quot[k] = c
        if c:
            for j, bc in enumerate(b.coeffs):
                rem[k + j] -= c * bc
    return OperatorPoly(tuple(quot)), OperatorPoly(tuple(rem[:db]))


def poly_gcd(a: OperatorPoly, b: OperatorPoly) -> OperatorPoly:
    """Monic greatest common divisor (zero if both inputs are zero)."""
    while not b.is_zero():
        a, b = b, poly_divmod(a, b)[1]
    return a.monic()


def format_poly(p: OperatorPoly, var: str = "dt") -> str:
    """Render as e.g. ``"dt^2 - 1"`` (highest power first)."""
    if p.is_zero():
        return "0"
    parts = []
    for i in range(p.degree, -1, -1):
        c = p.coeffs[i]
        if c == 0:
            continue
        sign = "-" if c < 0 else "+"
        mag = abs(c)
        if i == 0:
            body = str(mag)
        else:
            mono = var if i == 1 else f"{var}^{i}"
            body = mono if mag == 1 else f"{mag}*{mono}"
        parts.append((sign, body))
    first_sign, first_body = parts[0]
    out = ("-" if first_sign == "-" else "") + first_body
    for sign, body in parts[1:]:
        out += f" {sign} {body}"
    return out


@dataclass(frozen=True)
class OperatorMatrix:
    """Dense row-major matrix of :class:`OperatorPoly` entries."""

    rows: int
    cols: int
    entries: tuple[OperatorPoly, ...]

    def __post_init__(self):
        entries = tuple(_coerce(e) for e in self.entries)
        if len(entries) != self.rows * self.cols:
            raise ValueError(
                f"expected {self.rows * self.cols} entries for a {self.rows}x{self.cols} matrix, "
                f"got {len(entries)}"
            )
        object.__setattr__(self, "entries", entries)

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence]) -> "OperatorMatrix":
        nr = len(rows)
        nc = len(rows[0]) if nr else 0
        if any(len(r) != nc for r in rows):
            raise ValueError("ragged rows")
        return cls(nr, nc, tuple(e for r in rows for e in r))

    @classmethod
    def identity(cls, n: int) -> "OperatorMatrix":
        return cls(n, n, tuple(ONE if i == j else ZERO for i in range(n) for j in range(n)))

    @property
    def shape(self) -> tuple[int, int]:
        return self.rows, self.cols

    def __getitem__(self, ij: tuple[int, int]) -> OperatorPoly:
        i, j = ij
        return self.entries[i * self.cols + j]

    def to_rows(self) -> list[list[OperatorPoly]]:
        return [list(self.entries[i * self.cols:(i + 1) * self.cols]) for i in range(self.rows)]

    def __matmul__(self, other: "OperatorMatrix") -> "OperatorMatrix":
        if self.cols != other.rows:
            raise ValueError(f"shape mismatch {self.shape} @ {other.shape}")
        out = []
        for i in range(self.rows):
            for j in range(other.cols):
                acc = ZERO
                for k in range(self.cols):
                    a, b = self[i, k], other[k, j]
                    if a and b:
                        acc = acc + a * b
                out.append(acc)
        return OperatorMatrix(self.rows, other.cols, tuple(out))

    def max_degree(self) -> int:
        return max((e.degree for e in self.entries), default=-1)

    def is_diagonal(self) -> bool:
        return all(self[i, j].is_zero() for i in range(self.rows) for j in range(self.cols) if i != j)

    def diagonal(self) -> list[OperatorPoly]:
        return [self[i, i] for i in range(min(self.rows, self.cols))]

    def __str__(self):
        return "\n".join(", ".join(format_poly(e) for e in row) for row in self.to_rows())


def det(m: OperatorMatrix) -> OperatorPoly:
    """Determinant by cofactor expansion along the first row."""
    if m.rows != m.cols:
        raise ValueError(f"determinant of non-square {m.rows}x{m.cols} matrix")
    return _det_rows(m.to_rows())


def _det_rows(rows: list[list[OperatorPoly]]) -> OperatorPoly:
    n = len(rows)
    if n == 0:
        return ONE
    if n == 1:
        return rows[0][0]
    total = ZERO
    for j, e in enumerate(rows[0]):
        if e.is_zero():
            continue
        minor = [r[:j] + r[j + 1:] for r in rows[1:]]
        term = e * _det_rows(minor)
        total = total + term if j % 2 == 0 else total - term
    return total


@dataclass(frozen=True)
class SmithDecomposition:
    """``D = W @ H @ V`` with ``D`` diagonal and ``W``, ``V`` unimodular."""

    D: OperatorMatrix
    W: OperatorMatrix
    V: OperatorMatrix

    def dump(self) -> str:
        return "\n\n".join(f"{name}:\n{mat}" for name, mat in (("D", self.D), ("W", self.W), ("V", self.V)))


class _Work:
    """Mutable working copy used while reducing a matrix."""

    def __init__(self, h: OperatorMatrix):
        self.a = h.to_rows()
        self.m, self.n = h.rows, h.cols
        self.w = OperatorMatrix.identity(self.m).to_rows()
        self.v = OperatorMatrix.identity(self.n).to_rows()

    def swap_rows(self, i, j):
        if i != j:
            self.a[i], self.a[j] = self.a[j], self.a[i]
            self.w[i], self.w[j] = self.w[j], self.w[i]

    def swap_cols(self, i, j):
        if i != j:
            for r in self.a:
                r[i], r[j] = r[j], r[i]
            for r in self.v:
                r[i], r[j] = r[j], r[i]

    def add_row(self, dst, src, q: OperatorPoly):
        """row[dst] += q * row[src]"""
        for mat in (self.a, self.w):
            s = mat[src]
            mat[dst] = [d + q * x if x else d for d, x in zip(mat[dst], s)]

    def add_col(self, dst, src, q: OperatorPoly):
        """col[dst] += q * col[src]"""
        for mat in (self.a, self.v):
            for r in mat:
                if r[src]:
                    r[dst] = r[dst] + q * r[src]

    def scale_row(self, i, c: Fraction):
        for mat in (self.a, self.w):
            mat[i] = [e * c for e in mat[i]]


def smith_normal_form(h: OperatorMatrix) -> SmithDecomposition:
    """Smith normal form over Q[dt].

    Pivots on the lowest-degree nonzero entry of the remaining block (ties
    broken row-major), clears its row and column by Euclidean division, and
    repairs divisibility by folding an offending row into the pivot row.
    Nonzero diagonal entries come out monic.
    """
    if all(e.is_zero() for e in h.entries):
        raise ValueError("smith_normal_form requires a nonzero matrix")
    wk = _Work(h)
    a = wk.a
    for s in range(min(wk.m, wk.n)):
        while True:
            piv = None
            for i in range(s, wk.m):
                for j in range(s, wk.n):
                    e = a[i][j]
                    if e and (piv is None or e.degree < a[piv[0]][piv[1]].degree):
                        piv = (i, j)
            if piv is None:
                break
            wk.swap_rows(s, piv[0])
            wk.swap_cols(s, piv[1])
            p = a[s][s]
            dirty = False
            for i in range(s + 1, wk.m):
                if a[i][s]:
                    q, r = poly_divmod(a[i][s], p)
                    wk.add_row(i, s, -q)
                    dirty |= not r.is_zero()
            for j in range(s + 1, wk.n):
                if a[s][j]:
                    q, r = poly_divmod(a[s][j], p)
                    wk.add_col(j, s, -q)
                    dirty |= not r.is_zero()
            if dirty:
                continue
            bad = next(
                (i for i in range(s + 1, wk.m) for j in range(s + 1, wk.n)
                 if a[i][j] and not poly_divmod(a[i][j], p)[1].is_zero()),
                None,
            )
            if bad is not None:
                wk.add_row(s, bad, ONE)
                continue
            break
        if a[s][s]:
            wk.scale_row(s, 1 / a[s][s].lead)
        else:
            break

    return SmithDecomposition(
        OperatorMatrix.from_rows(wk.a), OperatorMatrix.from_rows(wk.w), OperatorMatrix.from_rows(wk.v)
    )


def sturm_sequence(p: OperatorPoly) -> list[OperatorPoly]:
    seq = [p, p.derivative()]
    while not seq[-1].is_zero():
        seq.append(-poly_divmod(seq[-2], seq[-1])[1])
    return seq[:-1]


def _sign_changes(values) -> int:
    signs = [v > 0 for v in values if v != 0]
    return sum(a != b for a, b in zip(signs, signs[1:]))


def count_real_roots(p: OperatorPoly) -> int:
    """Number of distinct real roots, by Sturm's theorem (exact)."""
    if p.degree < 1:
        return 0
    seq = sturm_sequence(p)
    at_pos = [q.lead for q in seq]
    at_neg = [q.lead * (-1) ** q.degree for q in seq]
    return _sign_changes(at_neg) - _sign_changes(at_pos)
