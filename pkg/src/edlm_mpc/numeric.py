"""Dense linear algebra and backward-shift polynomial arithmetic.

Polynomials are stored in ascending powers of the backward shift
``x = z^-1``: ``coeffs[i]`` multiplies ``z^-i``.  Matrices are plain
``numpy`` arrays.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg
from numpy.polynomial import polynomial as npoly

from .errors import (
    DegenerateZeroPolynomial,
    DimensionMismatch,
    DivergentLimit,
    SingularMatrix,
    UnstablePole,
)


@dataclass(frozen=True)
class Tolerances:
    """Every numerical threshold used by the package, in one place."""

    pivot_rel: float = 1e-12
    coef_trim_rel: float = 1e-13
    delta_remainder: float = 1e-9
    unstable_pole: float = 1e-9
    stability_margin: float = 1e-9
    exact_division: float = 1e-7
    box_ball_feasibility: float = 1e-8
    pg_step_tol: float = 1e-8
    pg_max_iter: int = 5000
    dykstra_tol: float = 1e-12
    dykstra_max_iter: int = 10000
    fixed_point_tol: float = 1e-8
    fixed_point_max_iter: int = 10
    divergence_guard: float = 1e6


TOL = Tolerances()


# ---------------------------------------------------------------------------
# dense linear algebra


def solve_linear(A, b, tol: Tolerances = TOL) -> np.ndarray:
    """Solve ``A x = b`` by LU factorisation with row pivoting.

    ``b`` may be a vector or a matrix of right-hand sides.  One step of
    iterative refinement is applied.

    Raises
    ------
    SingularMatrix
        If a pivot of the factorisation is smaller than
        ``tol.pivot_rel * max|A|``.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionMismatch(f"solve_linear needs a square matrix, got shape {A.shape}")
    if b.shape[0] != A.shape[0]:
        raise DimensionMismatch(f"right-hand side has {b.shape[0]} rows, matrix has {A.shape[0]}")
    if A.size == 0:
        return np.zeros_like(b)
    scale = np.max(np.abs(A))
    if scale == 0.0:
        raise SingularMatrix("matrix is identically zero")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(A, check_finite=True)
    min_pivot = np.min(np.abs(np.diag(lu)))
    if min_pivot < tol.pivot_rel * scale:
        raise SingularMatrix(
            f"pivot {min_pivot:.3e} below {tol.pivot_rel:g} * max|A| = {tol.pivot_rel * scale:.3e}"
        )
    x = scipy.linalg.lu_solve((lu, piv), b)
    x = x + scipy.linalg.lu_solve((lu, piv), b - A @ x)
    return x


# ---------------------------------------------------------------------------
# polynomials in z^-1


class ZPolynomial:
    """Polynomial ``c0 + c1 z^-1 + ... + cm z^-m`` with real coefficients."""

    __slots__ = ("coeffs",)

    def __init__(self, coeffs=(0.0,)):
        c = np.atleast_1d(np.array(coeffs, dtype=float))
        if c.ndim != 1:
            raise DimensionMismatch("polynomial coefficients must be one-dimensional")
        if c.size == 0:
            c = np.zeros(1)
        if not np.all(np.isfinite(c)):
            raise ValueError("polynomial coefficients must be finite")
        self.coeffs = c

    # construction helpers
    @classmethod
    def constant(cls, value: float) -> "ZPolynomial":
        return cls([value])

    @classmethod
    def delta(cls) -> "ZPolynomial":
        """The difference operator ``1 - z^-1``."""
        return cls([1.0, -1.0])

    @classmethod
    def monomial(cls, power: int, value: float = 1.0) -> "ZPolynomial":
        c = np.zeros(power + 1)
        c[power] = value
        return cls(c)

    # structure
    @property
    def degree(self) -> int:
        nz = np.flatnonzero(self.coeffs)
        return int(nz[-1]) if nz.size else 0

    @property
    def is_zero(self) -> bool:
        return not np.any(self.coeffs)

    def normalized(self, rel_tol: float = 0.0) -> "ZPolynomial":
        """Strip trailing coefficients with ``|c| <= rel_tol * max|c|``."""
        c = self.coeffs
        scale = np.max(np.abs(c)) if c.size else 0.0
        thresh = rel_tol * scale
        last = c.size - 1
        while last > 0 and abs(c[last]) <= thresh:
            last -= 1
        return ZPolynomial(c[: last + 1])

    def shift(self, k: int) -> "ZPolynomial":
        """Multiply by ``z^-k`` (``k >= 0``)."""
        if k < 0:
            raise ValueError("shift only supports delays (k >= 0)")
        return ZPolynomial(np.concatenate([np.zeros(k), self.coeffs]))

    def __call__(self, x):
        """Evaluate at ``x = z^-1`` (real or complex, scalar or array)."""
        return npoly.polyval(x, self.coeffs)

    def at_z(self, z):
        return self(1.0 / np.asarray(z))

    # arithmetic
    def _coerce(self, other) -> "ZPolynomial":
        if isinstance(other, ZPolynomial):
            return other
        if np.isscalar(other):
            return ZPolynomial([float(other)])
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return ZPolynomial(npoly.polyadd(self.coeffs, other.coeffs))

    __radd__ = __add__

    def __neg__(self):
        return ZPolynomial(-self.coeffs)

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return ZPolynomial(npoly.polysub(self.coeffs, other.coeffs))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return poly_mul(self, other)

    __rmul__ = __mul__

    def allclose(self, other, atol: float = 1e-10) -> bool:
        other = self._coerce(other)
        n = max(self.coeffs.size, other.coeffs.size)
        a = np.pad(self.coeffs, (0, n - self.coeffs.size))
        b = np.pad(other.coeffs, (0, n - other.coeffs.size))
        return bool(np.allclose(a, b, rtol=0.0, atol=atol))

    def __repr__(self):
        return f"ZPolynomial({self.coeffs.tolist()})"


def poly_mul(p: ZPolynomial, q: ZPolynomial) -> ZPolynomial:
    """Product of two polynomials (coefficient convolution)."""
    return ZPolynomial(np.convolve(p.coeffs, q.coeffs))


def poly_divmod(num: ZPolynomial, den: ZPolynomial) -> tuple[ZPolynomial, ZPolynomial]:
    den = den.normalized()
    if den.is_zero:
        raise ZeroDivisionError("division by the zero polynomial")
    q, r = npoly.polydiv(num.coeffs, den.coeffs)
    return ZPolynomial(q), ZPolynomial(r)


def _strip_delta_factors(p: ZPolynomial, tol: Tolerances) -> tuple[ZPolynomial, int]:
    """Divide out ``(1 - z^-1)`` while the remainder is negligible."""
    count = 0
    delta = ZPolynomial.delta()
    while not p.is_zero and p.normalized().degree >= 1:
        scale = np.sum(np.abs(p.coeffs))
        if abs(p(1.0)) > tol.delta_remainder * scale:
            break
        q, _ = poly_divmod(p, delta)
        p, count = q, count + 1
    return p, count


def poly_roots(p: ZPolynomial, tol: Tolerances = TOL) -> np.ndarray:
    """Roots in the z-plane of ``z^m p(z^-1)``.

    Leading zero coefficients are pure delays and contribute no finite root;
    trailing coefficients negligible relative to the largest are dropped,
    so roots at ``z = 0`` are not reported.

    Raises
    ------
    DegenerateZeroPolynomial
        If every coefficient is zero.
    """
    if p.is_zero:
        raise DegenerateZeroPolynomial("cannot find roots of the zero polynomial")
    c = p.normalized(tol.coef_trim_rel).coeffs
    first = int(np.flatnonzero(c)[0])
    c = c[first:]
    m = c.size - 1
    if m == 0:
        return np.zeros(0, dtype=complex)
    companion = np.zeros((m, m))
    companion[0, :] = -c[1:] / c[0]
    companion[1:, :-1] = np.eye(m - 1)
    return np.linalg.eigvals(companion).astype(complex)


# ---------------------------------------------------------------------------
# polynomial matrices


class ZPolyMatrix:
    """Rectangular grid of :class:`ZPolynomial` entries."""

    def __init__(self, entries: Sequence[Sequence[ZPolynomial]]):
        rows = [list(r) for r in entries]
        if not rows or not rows[0]:
            raise DimensionMismatch("polynomial matrix must be non-empty")
        ncols = len(rows[0])
        if any(len(r) != ncols for r in rows):
            raise DimensionMismatch("polynomial matrix rows differ in length")
        self.entries = [[e if isinstance(e, ZPolynomial) else ZPolynomial([e]) for e in r] for r in rows]

    @classmethod
    def from_array(cls, a) -> "ZPolyMatrix":
        """Constant matrix, or ``a[i, j, :]`` as coefficient vectors when 3-D."""
        a = np.asarray(a, dtype=float)
        if a.ndim == 2:
            a = a[:, :, None]
        return cls([[ZPolynomial(a[i, j]) for j in range(a.shape[1])] for i in range(a.shape[0])])

    @classmethod
    def identity(cls, n: int, poly: ZPolynomial | None = None) -> "ZPolyMatrix":
        poly = poly if poly is not None else ZPolynomial([1.0])
        return cls([[poly if i == j else ZPolynomial() for j in range(n)] for i in range(n)])

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.entries), len(self.entries[0])

    def __getitem__(self, idx) -> ZPolynomial:
        i, j = idx
        return self.entries[i][j]

    def max_degree(self) -> int:
        return max(e.degree for r in self.entries for e in r)

    def coefficient_array(self) -> np.ndarray:
        """Shape ``(rows, cols, max_degree + 1)``."""
        d = max(e.coeffs.size for r in self.entries for e in r)
        out = np.zeros(self.shape + (d,))
        for i, r in enumerate(self.entries):
            for j, e in enumerate(r):
                out[i, j, : e.coeffs.size] = e.coeffs
        return out

    def evaluate(self, x) -> np.ndarray:
        """Evaluate every entry at ``x = z^-1``; returns shape ``x.shape + (rows, cols)``."""
        x = np.asarray(x)
        coef = self.coefficient_array()
        vals = npoly.polyval(x[..., None, None], np.moveaxis(coef, -1, 0), tensor=False)
        return vals

    def __add__(self, other: "ZPolyMatrix") -> "ZPolyMatrix":
        if self.shape != other.shape:
            raise DimensionMismatch(f"cannot add {self.shape} and {other.shape}")
        return ZPolyMatrix([[a + b for a, b in zip(ra, rb)] for ra, rb in zip(self.entries, other.entries)])

    def __sub__(self, other: "ZPolyMatrix") -> "ZPolyMatrix":
        if self.shape != other.shape:
            raise DimensionMismatch(f"cannot subtract {other.shape} from {self.shape}")
        return ZPolyMatrix([[a - b for a, b in zip(ra, rb)] for ra, rb in zip(self.entries, other.entries)])

    def __matmul__(self, other: "ZPolyMatrix") -> "ZPolyMatrix":
        n, m = self.shape
        m2, p = other.shape
        if m != m2:
            raise DimensionMismatch(f"cannot multiply {self.shape} by {other.shape}")
        out = []
        for i in range(n):
            row = []
            for j in range(p):
                acc = ZPolynomial()
                for k in range(m):
                    acc = acc + self.entries[i][k] * other.entries[k][j]
                row.append(acc)
            out.append(row)
        return ZPolyMatrix(out)

    def scale(self, poly: ZPolynomial) -> "ZPolyMatrix":
        return ZPolyMatrix([[e * poly for e in r] for r in self.entries])

    def block(self, rows: slice, cols: slice) -> "ZPolyMatrix":
        return ZPolyMatrix([r[cols] for r in self.entries[rows]])

    def minor(self, i: int, j: int) -> "ZPolyMatrix":
        return ZPolyMatrix([r[:j] + r[j + 1 :] for k, r in enumerate(self.entries) if k != i])

    def det(self) -> ZPolynomial:
        return polymat_det(self)

    def adjugate(self) -> "ZPolyMatrix":
        n, m = self.shape
        if n != m:
            raise DimensionMismatch("adjugate needs a square matrix")
        if n == 1:
            return ZPolyMatrix([[ZPolynomial([1.0])]])
        cof = [[polymat_det(self.minor(i, j)) * ((-1) ** (i + j)) for j in range(n)] for i in range(n)]
        return ZPolyMatrix([[cof[j][i] for j in range(n)] for i in range(n)])

    def allclose(self, other: "ZPolyMatrix", atol: float = 1e-10) -> bool:
        if self.shape != other.shape:
            return False
        return all(a.allclose(b, atol) for ra, rb in zip(self.entries, other.entries) for a, b in zip(ra, rb))

    def __repr__(self):
        return f"ZPolyMatrix({[[e.coeffs.tolist() for e in r] for r in self.entries]})"


def polymat_det(M: ZPolyMatrix, tol: Tolerances = TOL) -> ZPolynomial:
    """Determinant of a square polynomial matrix by evaluation and interpolation.

    The matrix is evaluated at ``D + 1`` points on the unit circle of the
    ``z^-1`` plane, where ``D`` bounds the determinant degree; the scalar
    determinants are interpolated back to coefficients with an FFT.
    """
    n, m = M.shape
    if n != m:
        raise DimensionMismatch(f"determinant needs a square matrix, got {M.shape}")
    if n == 1:
        return ZPolynomial(M[0, 0].coeffs)
    row_deg = sum(max(e.degree for e in r) for r in M.entries)
    col_deg = sum(max(M.entries[i][j].degree for i in range(n)) for j in range(n))
    bound = min(row_deg, col_deg)
    npts = bound + 1
    x = np.exp(2j * np.pi * np.arange(npts) / npts)
    vals = np.linalg.det(M.evaluate(x))
    coeffs = np.fft.fft(vals).real / npts
    scale = np.max(np.abs(vals)) if vals.size else 0.0
    coeffs[np.abs(coeffs) <= tol.coef_trim_rel * max(scale, np.finfo(float).tiny)] = 0.0
    return ZPolynomial(coeffs)


# ---------------------------------------------------------------------------
# rational functions


class ZRational:
    """Ratio ``num(z^-1) / den(z^-1)``."""

    def __init__(self, num: ZPolynomial, den: ZPolynomial):
        if den.is_zero:
            raise ZeroDivisionError("rational function with zero denominator")
        self.num = num
        self.den = den

    def __call__(self, x):
        return self.num(x) / self.den(x)

    def poles(self, tol: Tolerances = TOL) -> np.ndarray:
        return poly_roots(self.den, tol)

    def as_polynomial(self, tol: float = TOL.exact_division) -> ZPolynomial:
        """Return ``num / den`` when the division is exact, else raise ``ValueError``."""
        if self.num.is_zero:
            return ZPolynomial()
        q, r = poly_divmod(self.num, self.den)
        scale = max(np.max(np.abs(self.num.coeffs)), 1e-300)
        if np.max(np.abs(r.coeffs)) > tol * scale:
            raise ValueError(f"denominator does not divide numerator (remainder {np.max(np.abs(r.coeffs)):.3e})")
        return q

    def impulse_response(self, n: int) -> np.ndarray:
        import scipy.signal

        b, a = self.num.coeffs, self.den.coeffs
        # cancel common z^-1 factors so the leading denominator coefficient is nonzero
        k = int(np.argmax(a != 0))
        if np.any(b[: min(k, b.size)] != 0):
            raise ValueError("transfer is not causal")
        b, a = b[k:], a[k:]
        u = np.zeros(n)
        u[0] = 1.0
        if b.size == 0:
            return u * 0.0
        return scipy.signal.lfilter(b, a, u)

    def __repr__(self):
        return f"ZRational(num={self.num.coeffs.tolist()}, den={self.den.coeffs.tolist()})"


def final_value(G: ZRational, input_kind: str, tol: Tolerances = TOL) -> float:
    """``lim_{z->1} (1 - z^-1) G(z^-1) R(z)`` for a unit step or unit ramp ``R``.

    The ramp has unit slope per sample, ``R = z^-1 / (1 - z^-1)^2``.
    Factors ``(1 - z^-1)`` shared by numerator and denominator are cancelled
    by synthetic division before the limit is taken.

    Raises
    ------
    UnstablePole
        If the denominator has a root with modulus above ``1 + tol.unstable_pole``.
    DivergentLimit
        If a pole at ``z = 1`` survives cancellation.
    """
    if input_kind not in ("step", "ramp"):
        raise ValueError(f"unknown input kind {input_kind!r}")
    num = G.num.normalized(tol.coef_trim_rel)
    if num.is_zero:
        return 0.0
    # (1 - z^-1) G R  =  num * extra / (den * (1 - z^-1)^order)
    order = 0 if input_kind == "step" else 1
    if input_kind == "ramp":
        num = num.shift(1)
    num, n_num = _strip_delta_factors(num, tol)
    den, n_den = _strip_delta_factors(G.den.normalized(tol.coef_trim_rel), tol)
    net = n_den + order - n_num
    if num.is_zero:
        return 0.0
    if den.normalized().degree >= 1:
        poles = poly_roots(den, tol)
        if poles.size and np.max(np.abs(poles)) > 1.0 + tol.unstable_pole:
            raise UnstablePole(f"pole with modulus {np.max(np.abs(poles)):.6g} outside the unit circle")
    if net > 0:
        raise DivergentLimit(f"{net} uncancelled pole(s) at z = 1")
    if net < 0:
        return 0.0
    d1 = den(1.0)
    if abs(d1) <= tol.delta_remainder * np.sum(np.abs(den.coeffs)):
        raise DivergentLimit("denominator vanishes at z = 1")
    return float(num(1.0) / d1)


def polymat_from_coeffs(coeffs) -> ZPolyMatrix:
    """``sum_i coeffs[i] z^-i`` as a polynomial matrix (``coeffs`` is a list of equal-shape arrays)."""
    return ZPolyMatrix.from_array(np.stack([np.atleast_2d(c) for c in coeffs], axis=-1))
