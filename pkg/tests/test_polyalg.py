import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sqkam.polyalg import (ConjugacyError, LayoutMismatchError, OutOfBasisError, TruncPoly,
                           basis_dimension, count_of_degree, evaluate, layout, monomials_of_degree,
                           mul_trunc, partial_derivative, power, real_to_resonance,
                           real_variable_polys, resonance_to_real, substitute)

LAY = layout(4, 4)
LAYC = layout(4, 4, True)

coef = st.complex_numbers(max_magnitude=2.0, allow_nan=False, allow_infinity=False)


def poly_strategy(lay):
    return st.lists(coef, min_size=lay.dim, max_size=lay.dim).map(lambda c: TruncPoly(lay, c))


def low_poly(lay, max_deg):
    """Polynomials supported on degrees <= max_deg."""
    def build(c):
        c = np.array(c, dtype=complex)
        c[lay.degrees > max_deg] = 0
        return TruncPoly(lay, c)
    return st.lists(coef, min_size=lay.dim, max_size=lay.dim).map(build)


points = st.lists(st.floats(-0.6, 0.6), min_size=4, max_size=4).map(np.array)


@pytest.mark.parametrize("n_s, dim", [(1, 4), (2, 14), (3, 34), (5, 125), (7, 329)])
def test_dimension_formula(n_s, dim):
    assert basis_dimension(4, n_s) == dim
    assert layout(4, n_s).dim == dim
    assert layout(4, n_s, True).dim == dim + 1


def test_degree_block_sizes():
    for d in range(1, 6):
        assert count_of_degree(4, d) == (d + 1) * (d + 2) * (d + 3) // 6
        assert len(monomials_of_degree(4, d)) == count_of_degree(4, d)


def test_ordering_is_graded_descending_lex():
    lay = layout(4, 3)
    assert [tuple(e) for e in lay.exponents[:4]] == [(1, 0, 0, 0), (0, 1, 0, 0), (0, 0, 1, 0), (0, 0, 0, 1)]
    assert tuple(lay.exponents[4]) == (2, 0, 0, 0)
    assert tuple(lay.exponents[13]) == (0, 0, 0, 2)
    for d in (2, 3):
        block = [tuple(e) for e in lay.exponents[lay.block(d)]]
        assert block == sorted(block, reverse=True)
    assert np.all(np.diff(lay.degrees) >= 0)


def test_index_roundtrip():
    lay = layout(4, 5)
    for i in range(lay.dim):
        assert lay.index_of(lay.exponents_of(i)) == i
    with pytest.raises(OutOfBasisError):
        lay.index_of((3, 3, 0, 0))
    with pytest.raises(OutOfBasisError):
        lay.index_of((0, 0, 0, 0))


def test_constant_free_layout_has_no_one():
    with pytest.raises(OutOfBasisError):
        TruncPoly.one(LAY)
    assert TruncPoly.one(LAYC).coefficient((0, 0, 0, 0)) == 1


def test_layout_mismatch():
    with pytest.raises(LayoutMismatchError):
        TruncPoly(LAY, np.zeros(3))
    with pytest.raises(LayoutMismatchError):
        TruncPoly.zero(LAY) + TruncPoly.zero(layout(4, 3))


@settings(max_examples=40, deadline=None)
@given(poly_strategy(LAY), poly_strategy(LAY))
def test_mul_commutes(a, b):
    assert mul_trunc(a, b).allclose(mul_trunc(b, a), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(poly_strategy(LAY), poly_strategy(LAY), poly_strategy(LAY))
def test_mul_associates_and_distributes(a, b, c):
    assert mul_trunc(mul_trunc(a, b), c).allclose(mul_trunc(a, mul_trunc(b, c)), atol=1e-10)
    assert mul_trunc(a, b + c).allclose(mul_trunc(a, b) + mul_trunc(a, c), atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(low_poly(LAY, 2), low_poly(LAY, 2), points)
def test_mul_matches_pointwise_product_below_truncation(a, b, x):
    z = real_to_resonance(x)
    assert np.isclose(evaluate(mul_trunc(a, b), z), evaluate(a, z) * evaluate(b, z), atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(poly_strategy(LAY), points)
def test_truncation_drops_only_high_degrees(a, x):
    # a * z_x differs from the exact product only by the degree-5 part of a z_x
    z = real_to_resonance(x)
    zx = TruncPoly.variable(LAY, 0)
    top = a.part(4)
    exact = evaluate(a, z) * z[0]
    assert np.isclose(evaluate(mul_trunc(a, zx), z), exact - evaluate(top, z) * z[0], atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(poly_strategy(LAY), points)
def test_conj_poly_gives_conjugate_values(a, x):
    z = real_to_resonance(x)
    assert np.isclose(evaluate(a.conj_poly(), z), np.conj(evaluate(a, z)), atol=1e-12)
    assert a.conj_poly().conj_poly() == a


@settings(max_examples=30, deadline=None)
@given(poly_strategy(LAY), st.integers(0, 3), points)
def test_derivative_matches_finite_difference(a, var, x):
    z = real_to_resonance(x).astype(complex)
    h = 1e-6
    zp, zm = z.copy(), z.copy()
    zp[var] += h
    zm[var] -= h
    fd = (evaluate(a, zp) - evaluate(a, zm)) / (2 * h)
    d = partial_derivative(a, var)
    assert np.isclose(evaluate(d, z), fd, atol=1e-6)


def test_derivative_of_linear_term_keeps_constant():
    p = TruncPoly.variable(LAY, 2, 3.0)
    d = partial_derivative(p, 2)
    assert d.constant == 3.0
    assert not np.any(d.coeffs)


def test_power_and_with_layout():
    x = TruncPoly.variable(LAY, 0)
    p3 = power(x, 3)
    assert p3.coefficient((3, 0, 0, 0)) == 1
    assert not np.any(power(x, 5).coeffs)
    q = p3.with_layout(layout(4, 2))
    assert not np.any(q.coeffs)
    with pytest.raises(ValueError):
        power(x, -1)


@settings(max_examples=40, deadline=None)
@given(points)
def test_real_resonance_roundtrip(x):
    assert np.allclose(resonance_to_real(real_to_resonance(x)), x, atol=1e-14)


def test_resonance_to_real_rejects_non_conjugate():
    with pytest.raises(ConjugacyError):
        resonance_to_real(np.array([1 + 1j, 1 + 1j, 0, 0]))


def test_real_variable_polys_recover_state():
    x = np.array([0.1, -0.2, 0.3, 0.05])
    z = real_to_resonance(x)
    vals = [evaluate(p, z) for p in real_variable_polys(LAY)]
    assert np.allclose(vals, x)


def test_substitute_identity_and_composition():
    xs = [TruncPoly.variable(LAYC, k) for k in range(4)]
    p = TruncPoly.from_terms(LAYC, [((2, 0, 1, 0), 1.5), ((0, 0, 0, 1), -2.0), ((0, 0, 0, 0), 0.25)])
    assert substitute(p, xs, LAYC).allclose(p)
    # x -> 2x scales the degree-3 term by 4
    xs2 = [2 * xs[0]] + xs[1:]
    assert np.isclose(substitute(p, xs2, LAYC).coefficient((2, 0, 1, 0)), 6.0)
