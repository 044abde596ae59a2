import numpy as np
import pytest
import sympy as sp

from sqkam.model import from_hamiltonian, henon_heiles
from sqkam.perturbation import exact_derivatives
from sqkam.polyalg import layout
from sqkam.sqmatrix import (build_square_matrix, chain_time_derivative, chains_off_resonance,
                            diagonal_audit, gauge_project, jordan_chains, jordan_structure,
                            lower_part_max, write_matrix_report)
from sqkam.torusmap import chain_values

I = 1j


def sympy_matrix(n_s):
    """M from a symbolic expansion of d/dt of every monomial."""
    zx, zxc, zy, zyc = zs = sp.symbols("zx zxc zy zyc")
    x, px, y, py = sp.symbols("x px y py")
    H = (x**2 + px**2 + y**2 + py**2) / 2 + x**2 * y - y**3 / 3
    sub = {x: (zx + zxc) / 2, px: sp.I * (zx - zxc) / 2, y: (zy + zyc) / 2, py: sp.I * (zy - zyc) / 2}
    # z = q - i p  =>  zdot = dH/dp + i dH/dq, and the conjugate with -i
    def rate(q, p, sign):
        return sp.expand((sp.diff(H, p) + sign * sp.I * sp.diff(H, q)).subs(sub, simultaneous=True))
    zdot = [rate(x, px, 1), rate(x, px, -1), rate(y, py, 1), rate(y, py, -1)]
    lay = layout(4, n_s)
    M = np.zeros((lay.dim, lay.dim), dtype=complex)
    for i, e in enumerate(lay.exponents):
        mono = sp.Mul(*[z**int(k) for z, k in zip(zs, e)])
        d = sp.expand(sum(sp.diff(mono, z) * zd for z, zd in zip(zs, zdot)))
        for term, c in sp.Poly(d, *zs).terms():
            if sum(term) <= n_s:
                M[i, lay.index_of(term)] = complex(c)
    return M


@pytest.fixture(scope="module")
def m3(hh):
    return build_square_matrix(hh, 3)


def test_dimensions(m3, m5):
    assert m3.dim == 34
    assert m5.dim == 125
    assert m3.entries.shape == (34, 34)


def test_matrix_matches_symbolic_expansion(m3):
    M = sympy_matrix(3)
    assert np.allclose(m3.entries, M, atol=1e-14)


def test_resonance_field_coefficients(hh):
    zx, zy = hh.resonance_field[0], hh.resonance_field[2]
    assert np.isclose(zx.coefficient((1, 0, 0, 0)), I)
    for e in [(1, 0, 1, 0), (0, 1, 1, 0), (1, 0, 0, 1), (0, 1, 0, 1)]:
        assert np.isclose(zx.coefficient(e), I / 2)
    expected_y = {(2, 0, 0, 0): I / 4, (1, 1, 0, 0): I / 2, (0, 2, 0, 0): I / 4,
                  (0, 0, 2, 0): -I / 4, (0, 0, 1, 1): -I / 2, (0, 0, 0, 2): -I / 4,
                  (0, 0, 1, 0): I}
    for e, c in expected_y.items():
        assert np.isclose(zy.coefficient(e), c)
    assert len(list(zy.terms())) == len(expected_y)


def test_diagonal_blocks(m3):
    d = m3.diagonal()
    assert np.allclose(d[:4], [I, -I, I, -I])
    assert np.allclose(d[4:14], [2 * I, 0, 2 * I, 0, -2 * I, 0, -2 * I, 2 * I, 0, -2 * I])
    assert np.allclose(d[14:17], [3 * I, I, 3 * I])
    assert np.isclose(d[-1], -3 * I)
    assert diagonal_audit(m3) == 0


def test_block_structure(m3):
    assert lower_part_max(m3) == 0
    assert not np.any(m3.block(1, 3))
    for k in (1, 2, 3):
        blk = m3.block(k, k)
        assert not np.any(blk - np.diag(np.diag(blk)))


def test_m12_rows(m3):
    M12 = m3.block(1, 2)
    h, q = I / 2, I / 4
    expected = np.array([
        [0, 0, h, h, 0, h, h, 0, 0, 0],
        [0, 0, -h, -h, 0, -h, -h, 0, 0, 0],
        [q, h, 0, 0, q, 0, 0, -q, -h, -q],
        [-q, -h, 0, 0, -q, 0, 0, q, h, q],
    ])
    assert np.allclose(M12, expected)


def test_m23_first_rows(m3):
    M23 = m3.block(2, 3)
    row0 = np.zeros(20, complex)
    row0[[2, 3, 5, 6]] = I
    assert np.allclose(M23[0], row0)
    row1 = np.zeros(20, complex)
    row1[[2, 3]] = -I / 2
    row1[[11, 12]] = I / 2
    assert np.allclose(M23[1], row1)


def test_chain_lengths_and_residuals(m5, pair5):
    assert max(pair5.chain_x.length, pair5.chain_y.length) == 3
    for ch in (pair5.chain_x, pair5.chain_y):
        assert ch.residuals(m5).max() < 1e-10
        assert np.isclose(ch.rows[0][m5.layout.index_of((1, 0, 0, 0) if ch.label == "x" else (0, 0, 1, 0))], 1)


def test_gauge_idempotent(m5, pair5):
    for ch in (pair5.chain_x, pair5.chain_y):
        again = gauge_project(ch, m5)
        assert again.length == ch.length
        assert np.allclose(again.rows, ch.rows, atol=1e-14)
        assert np.allclose(gauge_project(again, m5).rows, again.rows, atol=1e-14)


def test_gauge_zeroes_resonant_coefficients(m5, pair5):
    res = np.nonzero(np.abs(m5.diagonal() - I) < 1e-9)[0]
    lead = pair5.chain_x.rows[0][res]
    assert np.count_nonzero(np.abs(lead) > 1e-14) == 1


def test_jordan_structure_longest_block(m5):
    sizes = jordan_structure(m5, I)
    assert max(sizes) == 3
    assert {3, 2, 1} <= set(sizes)
    assert sum(sizes) == np.count_nonzero(np.abs(m5.diagonal() - I) < 1e-9)


def test_chain_derivative_is_u_times_m(m5, pair5):
    ch = pair5.chain_y
    for j in range(ch.length):
        assert np.allclose(chain_time_derivative(ch, j).coeffs, ch.rows[j] @ m5.entries, atol=1e-13)
    with pytest.raises(IndexError):
        chain_time_derivative(ch, ch.length)


def test_chain_relation_truncation_error_scales(hh, m5, pair5):
    # exact dw/dt minus (i w_j + w_{j+1}) is O(|z|^6)
    rows = pair5.rows(2)
    base = np.array([0.3, 0.1, -0.2, 0.25])
    errs = []
    for eps in (0.1, 0.05):
        s = eps * base
        exact = exact_derivatives(rows, m5.layout, hh, s)
        jor = chain_values(rows @ m5.entries, m5.layout, s)
        errs.append(np.abs(exact - jor).max())
    assert errs[0] / errs[1] > 40


def test_off_resonance_chains():
    H = [((2, 0, 0, 0), 0.5), ((0, 2, 0, 0), 0.5), ((0, 0, 2, 0), 0.65), ((0, 0, 0, 2), 0.65),
         ((2, 0, 1, 0), 1.0)]
    # linear frequency of the y mode is 2 * 0.65 = 1.3
    model = from_hamiltonian(H)
    assert not model.resonant
    M = build_square_matrix(model, 3)
    with pytest.raises(ValueError):
        jordan_chains(M)
    pair = chains_off_resonance(M)
    assert pair.chain_x.residuals(M).max() < 1e-10
    assert pair.chain_y.residuals(M).max() < 1e-10
    assert np.isclose(pair.chain_y.eigenvalue, 1.3j)


def test_rows_interleave(pair5):
    r = pair5.rows(4)
    assert np.array_equal(r[0], pair5.chain_x.rows[0])
    assert np.array_equal(r[1], pair5.chain_y.rows[0])
    assert np.array_equal(r[3], pair5.chain_y.rows[1])
    with pytest.raises(ValueError):
        pair5.rows(3)


def test_matrix_report(tmp_path, m5, pair5):
    rep = write_matrix_report(m5, pair5, tmp_path)
    assert rep["dimension"] == 125
    assert (tmp_path / "matrix.csv").exists() and (tmp_path / "chains.csv").exists()
    assert rep["chain_residuals"][0] < 1e-10


def test_n_s_validation(hh):
    with pytest.raises(ValueError):
        build_square_matrix(hh, 0)


def test_henon_heiles_frequencies():
    m = henon_heiles()
    assert m.mu_x == 1.0 and m.mu_y == 1.0 and m.resonant
