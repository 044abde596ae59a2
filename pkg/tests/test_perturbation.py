import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sqkam.dynamics import rk8_step
from sqkam.model import from_hamiltonian
from sqkam.perturbation import (DivisionBlowupError, PhiField, ResonanceObstructionError,
                                exact_derivatives, first_order_actions, first_order_targets,
                                jordan_derivatives, normalized_spectrum, phi_fields, theta_tables,
                                update_frequencies)
from sqkam.sqmatrix import build_square_matrix, jordan_chains
from sqkam.torusmap import (Combination, FourierTable, TorusGrid, chain_values, fourier2d, grid_phases,
                            sample_torus)

W = 5


def phi_from(rng, scale=0.05):
    tabs = []
    for _ in range(2):
        c = scale * (rng.normal(size=(2 * W + 1,) * 2) + 1j * rng.normal(size=(2 * W + 1,) * 2))
        tabs.append(FourierTable(c, W))
    return PhiField(None, tuple(tabs), np.array([t[0, 0] for t in tabs]))


def dummy_comb(pair5, omega=(0.91, 1.03), theta0=(0.4, -1.2)):
    return Combination(np.eye(2), pair5.rows(2), pair5.chain_x.layout, r=(0.17, 0.09),
                       omega=omega, theta0=theta0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_theta_linear_in_phi(pair5, seed, a, b):
    rng = np.random.default_rng(seed)
    p, q = phi_from(rng), phi_from(rng)
    comb = dummy_comb(pair5)
    mix = PhiField(None, tuple(a * s + b * t for s, t in zip(p.tables, q.tables)), a * p.mean + b * q.mean)
    tp, tq, tm = (theta_tables(x, comb) for x in (p, q, mix))
    for l in range(2):
        assert np.allclose(tm.tables[l].coeffs, a * tp.tables[l].coeffs + b * tq.tables[l].coeffs, atol=1e-12)


def test_theta_division_and_zero_initial_deviation(rng, pair5):
    comb = dummy_comb(pair5)
    phi = phi_from(rng)
    th = theta_tables(phi, comb)
    n, m = th.tables[0].indices()
    div = n * 0.91 + m * 1.03
    off = (n != 0) | (m != 0)
    assert np.allclose((1j * div * th.tables[0].coeffs)[off], phi.tables[0].coeffs[off])
    assert np.allclose(th.deviation(np.array(0.4), np.array(-1.2)), 0, atol=1e-13)
    assert not np.allclose(th.deviation(np.array(1.0), np.array(2.0)), 0)
    assert th.window == W
    assert len(th.size()) == 2


def test_small_divisor_zeroed_or_raised(pair5):
    comb = dummy_comb(pair5, omega=(1.0, 1.0))
    c = np.zeros((2 * W + 1,) * 2, complex)
    c[W + 1, W - 1] = 0.01           # line (1, -1), divisor 0
    c[W + 2, W] = 0.02
    tab = FourierTable(c, W)
    phi = PhiField(None, (tab, tab), np.zeros(2))
    th = theta_tables(phi, comb)
    assert th.tables[0][1, -1] == 0
    assert (1, 1, -1, pytest.approx(0.01)) in th.zeroed
    with pytest.raises(ResonanceObstructionError) as exc:
        theta_tables(phi, comb, strict=True)
    assert exc.value.line == (1, -1)


def test_first_order_actions_match_target_spectrum(ref_solve):
    fin = ref_solve.final
    theta, comb = fin.theta, fin.used
    red = first_order_actions(theta, comb, phased=False)
    N = 2 * (theta.window + 2) + 2
    th = grid_phases(N)
    vals = first_order_targets(theta, comb)(th[:, None], th[None, :])
    for l in range(2):
        ref = fourier2d(vals[..., l], theta.window + 1)
        assert np.allclose(red[l].coeffs, ref.coeffs, atol=1e-12)


def test_phased_lines_carry_initial_phases(ref_solve):
    fin = ref_solve.final
    theta, comb = fin.theta, fin.used
    a = first_order_actions(theta, comb, phased=True)
    b = first_order_actions(theta, comb, phased=False)
    t10, t20 = theta.theta0
    n, m = a[0].indices()
    ph1 = np.exp(1j * ((n - 1) * t10 + m * t20))
    ph2 = np.exp(1j * (n * t10 + (m - 1) * t20))
    side1 = np.ones_like(ph1, bool)
    side1[1 + a[0].window, a[0].window] = False
    side2 = np.ones_like(ph2, bool)
    side2[a[1].window, 1 + a[1].window] = False
    assert np.allclose(a[0].coeffs[side1], (b[0].coeffs * ph1)[side1])
    assert np.allclose(a[1].coeffs[side2], (b[1].coeffs * ph2)[side2])
    assert a[0][1, 0] == b[0][1, 0]
    norm = normalized_spectrum(b, comb)
    assert norm[0][1, 0] == 1.0 and norm[1][0, 1] == 1.0


@pytest.fixture(scope="module")
def rigid():
    H = [((2, 0, 0, 0), 0.5), ((0, 2, 0, 0), 0.5), ((0, 0, 2, 0), 0.5), ((0, 0, 0, 2), 0.5)]
    model = from_hamiltonian(H, name="oscillator")
    pair = jordan_chains(build_square_matrix(model, 3))
    s0 = np.array([0.2, 0.1, -0.1, 0.15])
    comb = Combination(np.eye(2), pair.rows(2), pair.chain_x.layout).with_rotation(s0)
    return model, comb, s0


def test_rigid_rotation_has_no_phase_fluctuation(rigid):
    model, comb, s0 = rigid
    grid = sample_torus(comb, 16, 16, seed_state=s0)
    phi = phi_fields(comb, model, grid)
    assert np.abs(phi.values).max() < 1e-12
    om1, om2, im = update_frequencies(phi, model.mu_x)
    assert np.isclose(om1, 1.0) and np.isclose(om2, 1.0) and im < 1e-12


def test_exact_derivatives_match_trajectory(hh, pair5, state_ref):
    rows = pair5.rows(4)
    lay = pair5.chain_x.layout
    h = 1e-3
    fwd = chain_values(rows, lay, rk8_step(hh, state_ref, h))
    bwd = chain_values(rows, lay, rk8_step(hh, state_ref, -h))
    fd = (fwd - bwd) / (2 * h)
    assert np.allclose(exact_derivatives(rows, lay, hh, state_ref), fd, atol=1e-8)


def test_jordan_derivatives_agree_at_small_amplitude(hh, pair5, m5):
    ch = pair5.chain_x
    nxt = np.vstack([ch.rows[1:], np.zeros((1, m5.dim))])
    s = np.array([0.01, 0.004, -0.006, 0.008])
    jd = jordan_derivatives(nxt, ch.eigenvalue, ch.rows, ch.layout, s)
    ex = exact_derivatives(ch.rows, ch.layout, hh, s)
    assert np.abs(jd - ex).max() < 1e-10


def test_division_blowup_when_action_vanishes(hh, pair5):
    comb = dummy_comb(pair5)
    th = grid_phases(8)
    grid = TorusGrid(th, th, np.zeros((8, 8, 4)), payload={"w": np.zeros((8, 8, 2))})
    with pytest.raises(DivisionBlowupError):
        phi_fields(comb, hh, grid)
