"""Truncated multivariate polynomials with complex coefficients.

Monomials are graded by total degree.  Inside a degree block the first
variable's power runs from high to low, and the remaining variables follow
the same rule recursively, so for the resonance variables
``(z_x, z_x*, z_y, z_y*)`` the basis starts::

    z_x, z_x*, z_y, z_y*, z_x^2, z_x z_x*, z_x z_y, z_x z_y*, z_x*^2, ...

Coefficients are stored densely.  A :class:`BasisLayout` owns the index
tables (products, derivatives) and is cached per ``(n_vars, n_s, constant)``.
"""
from __future__ import annotations

from functools import lru_cache
from math import comb

import numpy as np

N_VARS = 4
VARIABLE_NAMES = ("zx", "zxc", "zy", "zyc")


class OutOfBasisError(ValueError):
    """A monomial does not belong to the layout (degree too high or too low)."""


class LayoutMismatchError(ValueError):
    pass


class ConjugacyError(ValueError):
    """Resonance variables that should be complex conjugates are not."""


def basis_dimension(n_vars: int, n_s: int, include_constant: bool = False) -> int:
    """Number of monomials of total degree <= n_s (constant excluded by default)."""
    if n_vars < 1 or n_s < 0:
        raise ValueError(f"need n_vars >= 1 and n_s >= 0, got {n_vars}, {n_s}")
    total = comb(n_s + n_vars, n_vars)
    return total if include_constant else total - 1


def _degree_block(n_vars: int, degree: int) -> list[tuple[int, ...]]:
    if n_vars == 1:
        return [(degree,)]
    out = []
    for lead in range(degree, -1, -1):
        for rest in _degree_block(n_vars - 1, degree - lead):
            out.append((lead,) + rest)
    return out


class BasisLayout:
    """Monomial ordering and index tables for one ``(n_vars, n_s)`` basis.

    Use :func:`layout` to obtain cached instances.
    """

    def __init__(self, n_vars: int, n_s: int, include_constant: bool = False):
        if n_vars < 1 or n_s < 1:
            raise ValueError(f"need n_vars >= 1 and n_s >= 1, got {n_vars}, {n_s}")
        self.n_vars = n_vars
        self.n_s = n_s
        self.include_constant = include_constant
        lowest = 0 if include_constant else 1
        exps = []
        self.block_offsets = {}
        self.block_sizes = {}
        for d in range(lowest, n_s + 1):
            block = _degree_block(n_vars, d)
            self.block_offsets[d] = len(exps)
            self.block_sizes[d] = len(block)
            exps.extend(block)
        self.exponents = np.array(exps, dtype=np.int64)
        self.exponents.flags.writeable = False
        self.degrees = self.exponents.sum(axis=1)
        self.degrees.flags.writeable = False
        self.dim = len(exps)
        self._index = {e: i for i, e in enumerate(exps)}
        self._mul = None
        self._deriv = {}

    def __repr__(self):
        return (f"BasisLayout(n_vars={self.n_vars}, n_s={self.n_s}, "
                f"include_constant={self.include_constant})")

    def key(self):
        return (self.n_vars, self.n_s, self.include_constant)

    def index_of(self, exponents) -> int:
        e = tuple(int(k) for k in exponents)
        if len(e) != self.n_vars or min(e) < 0:
            raise OutOfBasisError(f"bad exponent vector {e}")
        try:
            return self._index[e]
        except KeyError:
            raise OutOfBasisError(
                f"monomial {e} of degree {sum(e)} is outside {self!r}") from None

    def exponents_of(self, position: int) -> tuple[int, ...]:
        if not 0 <= position < self.dim:
            raise OutOfBasisError(f"position {position} outside 0..{self.dim - 1}")
        return tuple(int(k) for k in self.exponents[position])

    def block(self, degree: int) -> slice:
        o = self.block_offsets[degree]
        return slice(o, o + self.block_sizes[degree])

    # index tables -----------------------------------------------------
    def mul_table(self):
        """(ia, ib, ic): Z[ia] * Z[ib] = Z[ic] for every product staying in the basis."""
        if self._mul is None:
            base = self.n_s + 1
            radix = base ** np.arange(self.n_vars, dtype=np.int64)
            codes = self.exponents @ radix
            lookup = np.full(base ** self.n_vars, -1, dtype=np.int64)
            lookup[codes] = np.arange(self.dim)
            ends = np.searchsorted(self.degrees, np.arange(self.n_s + 1), side="right")
            ia, ib = [], []
            for i in range(self.dim):
                room = self.n_s - self.degrees[i]
                end = ends[room]
                if end == 0:
                    continue
                ia.append(np.full(end, i, dtype=np.int64))
                ib.append(np.arange(end, dtype=np.int64))
            ia = np.concatenate(ia)
            ib = np.concatenate(ib)
            ic = lookup[codes[ia] + codes[ib]]
            self._mul = (ia, ib, ic)
        return self._mul

    def deriv_table(self, var: int):
        """(src, dst, factor) so that d/dvar of Z[src] = factor * Z[dst]."""
        if var not in self._deriv:
            src, dst, fac = [], [], []
            for i, e in enumerate(self.exponents):
                if e[var] == 0:
                    continue
                f = e.copy()
                f[var] -= 1
                if f.sum() == 0 and not self.include_constant:
                    # derivative of a linear monomial is a constant
                    dst.append(-1)
                else:
                    dst.append(self._index[tuple(int(k) for k in f)])
                src.append(i)
                fac.append(e[var])
            self._deriv[var] = (np.array(src, dtype=np.int64),
                                np.array(dst, dtype=np.int64),
                                np.array(fac, dtype=float))
        return self._deriv[var]

    def monomials(self, points) -> np.ndarray:
        """Values of every basis monomial at ``points`` (shape ``(..., n_vars)``)."""
        pts = np.asarray(points, dtype=complex)
        if pts.shape[-1] != self.n_vars:
            raise ValueError(f"points need trailing dimension {self.n_vars}")
        # powers[..., v, k] = pts[..., v] ** k
        powers = np.ones(pts.shape + (self.n_s + 1,), dtype=complex)
        for k in range(1, self.n_s + 1):
            powers[..., k] = powers[..., k - 1] * pts
        out = np.ones(pts.shape[:-1] + (self.dim,), dtype=complex)
        for v in range(self.n_vars):
            out *= powers[..., v, :][..., self.exponents[:, v]]
        return out


@lru_cache(maxsize=None)
def layout(n_vars: int = N_VARS, n_s: int = 5, include_constant: bool = False) -> BasisLayout:
    return BasisLayout(n_vars, n_s, include_constant)


class TruncPoly:
    """Polynomial truncated at total degree ``layout.n_s``.

    Instances are treated as immutable; arithmetic returns new objects.
    """

    __slots__ = ("layout", "coeffs", "constant")

    def __init__(self, lay: BasisLayout, coeffs=None, constant: complex = 0.0):
        self.layout = lay
        if coeffs is None:
            c = np.zeros(lay.dim, dtype=complex)
        else:
            c = np.array(coeffs, dtype=complex)
            if c.shape != (lay.dim,):
                raise LayoutMismatchError(
                    f"expected {lay.dim} coefficients, got shape {c.shape}")
        c.flags.writeable = False
        self.coeffs = c
        # only meaningful for constant-free layouts: a dropped degree-0 part
        self.constant = complex(constant) if not lay.include_constant else 0.0

    # constructors -----------------------------------------------------
    @classmethod
    def zero(cls, lay):
        return cls(lay)

    @classmethod
    def monomial(cls, lay, exponents, coeff=1.0):
        c = np.zeros(lay.dim, dtype=complex)
        c[lay.index_of(exponents)] = coeff
        return cls(lay, c)

    @classmethod
    def variable(cls, lay, var, coeff=1.0):
        e = [0] * lay.n_vars
        e[var] = 1
        return cls.monomial(lay, e, coeff)

    @classmethod
    def one(cls, lay):
        if not lay.include_constant:
            raise OutOfBasisError("layout has no constant monomial")
        return cls.monomial(lay, [0] * lay.n_vars)

    @classmethod
    def from_terms(cls, lay, terms):
        """Build from an iterable of ``(exponents, coefficient)``; repeats add up."""
        c = np.zeros(lay.dim, dtype=complex)
        for e, v in terms:
            c[lay.index_of(e)] += v
        return cls(lay, c)

    # inspection -------------------------------------------------------
    @property
    def n_s(self):
        return self.layout.n_s

    def degree(self) -> int:
        nz = np.nonzero(self.coeffs)[0]
        if len(nz) == 0:
            return 0 if self.layout.include_constant else -1
        return int(self.layout.degrees[nz].max())

    def coefficient(self, exponents) -> complex:
        return complex(self.coeffs[self.layout.index_of(exponents)])

    def terms(self):
        for i in np.nonzero(self.coeffs)[0]:
            yield self.layout.exponents_of(int(i)), complex(self.coeffs[i])

    def part(self, degree: int) -> "TruncPoly":
        c = np.zeros_like(self.coeffs)
        sl = self.layout.block(degree)
        c[sl] = self.coeffs[sl]
        return TruncPoly(self.layout, c)

    def __repr__(self):
        shown = " + ".join(f"({v:.6g}){e}" for e, v in list(self.terms())[:6])
        more = " + ..." if np.count_nonzero(self.coeffs) > 6 else ""
        return f"TruncPoly[{self.layout.n_s}]({shown or '0'}{more})"

    # arithmetic -------------------------------------------------------
    def _check(self, other):
        if not isinstance(other, TruncPoly):
            raise TypeError(f"cannot combine TruncPoly with {type(other).__name__}")
        if other.layout.key() != self.layout.key():
            raise LayoutMismatchError(f"{self.layout!r} vs {other.layout!r}")

    def __add__(self, other):
        if isinstance(other, TruncPoly):
            self._check(other)
            return TruncPoly(self.layout, self.coeffs + other.coeffs)
        return NotImplemented

    def __sub__(self, other):
        if isinstance(other, TruncPoly):
            self._check(other)
            return TruncPoly(self.layout, self.coeffs - other.coeffs)
        return NotImplemented

    def __neg__(self):
        return TruncPoly(self.layout, -self.coeffs)

    def __mul__(self, other):
        if isinstance(other, TruncPoly):
            return mul_trunc(self, other)
        if np.isscalar(other):
            return TruncPoly(self.layout, self.coeffs * other)
        return NotImplemented

    def __rmul__(self, other):
        if np.isscalar(other):
            return TruncPoly(self.layout, self.coeffs * other)
        return NotImplemented

    def __eq__(self, other):
        if not isinstance(other, TruncPoly):
            return NotImplemented
        return self.layout.key() == other.layout.key() and np.array_equal(self.coeffs, other.coeffs)

    __hash__ = None

    def allclose(self, other, atol=1e-12, rtol=0.0):
        self._check(other)
        return np.allclose(self.coeffs, other.coeffs, atol=atol, rtol=rtol)

    def conj_poly(self) -> "TruncPoly":
        """The polynomial whose values are the complex conjugates of this one's
        on real phase space: conjugate coefficients and swap z <-> z*."""
        lay = self.layout
        perm = _conjugation_permutation(lay.key())
        return TruncPoly(lay, np.conj(self.coeffs)[perm])

    def with_layout(self, lay: BasisLayout) -> "TruncPoly":
        """Re-express in another layout, dropping monomials that do not fit."""
        if lay.n_vars != self.layout.n_vars:
            raise LayoutMismatchError("variable count differs")
        c = np.zeros(lay.dim, dtype=complex)
        for i in np.nonzero(self.coeffs)[0]:
            e = tuple(int(k) for k in self.layout.exponents[i])
            d = sum(e)
            if d > lay.n_s or (d == 0 and not lay.include_constant):
                continue
            c[lay.index_of(e)] = self.coeffs[i]
        return TruncPoly(lay, c)

    def __call__(self, point):
        return evaluate(self, point)


@lru_cache(maxsize=None)
def _conjugation_permutation(key):
    lay = layout(*key)
    if lay.n_vars % 2:
        raise ValueError("conjugation needs (z, z*) variable pairs")
    swap = np.arange(lay.n_vars).reshape(-1, 2)[:, ::-1].ravel()
    # new coefficient at monomial e is conj of old coefficient at swapped e
    return np.array([lay.index_of(e[swap]) for e in lay.exponents], dtype=np.int64)


def mul_trunc(a: TruncPoly, b: TruncPoly) -> TruncPoly:
    """Product of two polynomials with every monomial above degree n_s dropped."""
    a._check(b)
    ia, ib, ic = a.layout.mul_table()
    prod = a.coeffs[ia] * b.coeffs[ib]
    c = (np.bincount(ic, weights=prod.real, minlength=a.layout.dim)
         + 1j * np.bincount(ic, weights=prod.imag, minlength=a.layout.dim))
    return TruncPoly(a.layout, c)


def power(p: TruncPoly, k: int) -> TruncPoly:
    if k < 0:
        raise ValueError("negative powers are not polynomials")
    if k == 0:
        return TruncPoly.one(p.layout)
    out = p
    for _ in range(k - 1):
        out = mul_trunc(out, p)
    return out


def partial_derivative(p: TruncPoly, var: int) -> TruncPoly:
    """Term-wise derivative.  In a constant-free layout the constant produced by
    differentiating a linear monomial is kept in ``.constant``."""
    if not 0 <= var < p.layout.n_vars:
        raise ValueError(f"variable index {var} out of range")
    src, dst, fac = p.layout.deriv_table(var)
    vals = p.coeffs[src] * fac
    c = np.zeros(p.layout.dim, dtype=complex)
    keep = dst >= 0
    np.add.at(c, dst[keep], vals[keep])
    const = complex(vals[~keep].sum()) if not p.layout.include_constant else 0.0
    return TruncPoly(p.layout, c, constant=const)


def evaluate(p: TruncPoly, point) -> complex | np.ndarray:
    """Direct sum of monomial terms; ``point`` may carry leading batch axes."""
    mono = p.layout.monomials(point)
    val = mono @ p.coeffs + p.constant
    return complex(val) if np.ndim(val) == 0 else val


def evaluate_many(coeff_rows: np.ndarray, lay: BasisLayout, points) -> np.ndarray:
    """Evaluate several polynomials (rows of ``coeff_rows``) at ``points``;
    result has shape ``points.shape[:-1] + (n_rows,)``."""
    return lay.monomials(points) @ np.asarray(coeff_rows).T


# real <-> resonance variables ----------------------------------------------

def real_to_resonance(state) -> np.ndarray:
    """(x, p_x, y, p_y) -> (z_x, z_x*, z_y, z_y*) with z = q - i p."""
    s = np.asarray(state, dtype=float)
    x, px, y, py = s[..., 0], s[..., 1], s[..., 2], s[..., 3]
    return np.stack([x - 1j * px, x + 1j * px, y - 1j * py, y + 1j * py], axis=-1)


def resonance_to_real(z, tol: float = 1e-8) -> np.ndarray:
    """Inverse of :func:`real_to_resonance`; checks that z* really is conj(z)."""
    z = np.asarray(z, dtype=complex)
    for k in (0, 2):
        dev = np.abs(z[..., k + 1] - np.conj(z[..., k]))
        scale = np.maximum(1.0, np.abs(z[..., k]))
        if np.any(dev > tol * scale):
            raise ConjugacyError(
                f"variables {k} and {k + 1} are not conjugate (max dev {dev.max():.3e})")
    zx = 0.5 * (z[..., 0] + np.conj(z[..., 1]))
    zy = 0.5 * (z[..., 2] + np.conj(z[..., 3]))
    return np.stack([zx.real, -zx.imag, zy.real, -zy.imag], axis=-1)


def real_variable_polys(lay: BasisLayout):
    """x, p_x, y, p_y written as linear polynomials in the resonance variables."""
    zx, zxc, zy, zyc = (TruncPoly.variable(lay, k) for k in range(4))
    x = 0.5 * (zx + zxc)
    px = 0.5j * (zx - zxc)
    y = 0.5 * (zy + zyc)
    py = 0.5j * (zy - zyc)
    return x, px, y, py


def substitute(p: TruncPoly, values: list[TruncPoly], target: BasisLayout) -> TruncPoly:
    """Compose ``p`` with polynomials ``values`` (one per variable of ``p``).

    The result lives in ``target`` (which must contain a constant if ``p`` has one).
    """
    if len(values) != p.layout.n_vars:
        raise ValueError("need one substitution per variable")
    powers = [[None] * (p.layout.n_s + 1) for _ in values]
    out = TruncPoly.zero(target)
    for e, c in p.terms():
        term = None
        for v, k in enumerate(e):
            if k == 0:
                continue
            if powers[v][k] is None:
                powers[v][k] = power(values[v], k)
            term = powers[v][k] if term is None else mul_trunc(term, powers[v][k])
        if term is None:
            out = out + TruncPoly.one(target) * c
        else:
            out = out + c * term
    return out


def monomials_of_degree(n_vars: int, degree: int):
    """Exponent tuples of one degree block in layout order."""
    return _degree_block(n_vars, degree)


def count_of_degree(n_vars: int, degree: int) -> int:
    return comb(degree + n_vars - 1, n_vars - 1)


__all__ = [
    "BasisLayout", "TruncPoly", "layout", "basis_dimension", "mul_trunc", "power",
    "partial_derivative", "evaluate", "evaluate_many", "real_to_resonance",
    "resonance_to_real", "real_variable_polys", "substitute", "OutOfBasisError",
    "LayoutMismatchError", "ConjugacyError", "monomials_of_degree", "count_of_degree",
]
