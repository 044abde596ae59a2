"""One first-order perturbation step on a sampled torus: exact phase-rate
fields phi_l, their division by n*omega1 + m*omega2, and the first-order
actions v_l^(1)."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .model import ModelSpec
from .polyalg import TruncPoly, partial_derivative, real_to_resonance
from .torusmap import Combination, FourierTable, TorusGrid, fourier2d, synthesize

log = logging.getLogger(__name__)

DIVISOR_FLOOR = 1e-3


class DivisionBlowupError(RuntimeError):
    pass


class ResonanceObstructionError(RuntimeError):
    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line


@dataclass
class PhiField:
    values: np.ndarray         # (N1, N2, 2) complex
    tables: tuple              # FourierTable per action
    mean: np.ndarray           # (2,) plane averages


@dataclass
class ThetaTables:
    tables: tuple              # theta~_1, theta~_2
    omega: tuple
    theta0: tuple
    zeroed: list = field(default_factory=list)   # [(l, n, m, |phi~|)] dropped small divisors

    @property
    def window(self):
        return self.tables[0].window

    def deviation(self, theta1, theta2):
        """Delta theta_l at arbitrary torus phases, shape (..., 2)."""
        return np.stack([synthesize(t, theta1, theta2) for t in self.tables], axis=-1)

    def size(self):
        """sum |theta~_lnm| per action."""
        return tuple(float(np.abs(t.coeffs).sum()) for t in self.tables)


# ---------------------------------------------------------------------------
# derivatives of chain polynomials

def _gradient_rows(rows, lay):
    """Coefficients and constants of dw_j/dZ_q; arrays (n_v, 4, D) and (n_v, 4)."""
    C = np.zeros((len(rows), 4, lay.dim), dtype=complex)
    K = np.zeros((len(rows), 4), dtype=complex)
    for j, r in enumerate(rows):
        p = TruncPoly(lay, r)
        for q in range(4):
            d = partial_derivative(p, q)
            C[j, q] = d.coeffs
            K[j, q] = d.constant
    return C, K


def exact_derivatives(rows, lay, model: ModelSpec, states):
    """dw_j/dt = sum_q (dw_j/dZ_q) dZ_q/dt with the model's own field.

    ``states`` are real, shape (..., 4); returns (..., n_v)."""
    Z = real_to_resonance(np.asarray(states, dtype=float))
    mon = lay.monomials(Z)
    field_polys = model.field_in(lay.n_s)
    zdot = np.stack([mon @ f.coeffs for f in field_polys], axis=-1)       # (..., 4)
    C, K = _gradient_rows(rows, lay)
    grad = np.einsum("...d,jqd->...jq", mon, C) + K                          # (..., n_v, 4)
    return np.einsum("...jq,...q->...j", grad, zdot)


def jordan_derivatives(rows_next, eigenvalue, rows, lay, states):
    """i mu w_j + w_{j+1} for the given rows; ``rows_next`` holds u_{j+1}
    (zeros at the chain end)."""
    Z = real_to_resonance(np.asarray(states, dtype=float))
    mon = lay.monomials(Z)
    return mon @ (eigenvalue * np.asarray(rows) + np.asarray(rows_next)).T


# ---------------------------------------------------------------------------
# phi, theta

def phi_fields(comb: Combination, model: ModelSpec, grid: TorusGrid, mu: float | None = None,
               window: int | None = None) -> PhiField:
    """phi_l = -i (sum_j a_lj dw_j/dt) / v_l - mu at every grid node."""
    if mu is None:
        mu = model.mu_x
    w = grid.payload.get("w")
    if w is None:
        from .torusmap import chain_values
        w = chain_values(comb.rows, comb.layout, grid.states)
    v = w @ comb.a.T
    small = np.abs(v).min()
    if small < 1e-12:
        raise DivisionBlowupError(f"|v| = {small:.2e} at a grid node; radius too small or inversion failed")
    wd = exact_derivatives(comb.rows, comb.layout, model, grid.states)
    phi = -1j * (wd @ comb.a.T) / v - mu
    tables = tuple(fourier2d(phi[..., l], window) for l in range(2))
    mean = np.array([t[0, 0] for t in tables])
    return PhiField(phi, tables, mean)


def update_frequencies(phi: PhiField, mu: float):
    """omega_l = mu + Re(mean phi_l) and the imaginary-part residual."""
    om = tuple(float(mu + m.real) for m in phi.mean)
    return om[0], om[1], float(np.max(np.abs(phi.mean.imag)))


def theta_tables(phi: PhiField, comb: Combination, omega=None, floor: float = DIVISOR_FLOOR,
                 strict: bool = False, noise: float = 1e-10) -> ThetaTables:
    """theta~_lnm = phi~_lnm / (i (n omega1 + m omega2)) off the origin; the
    (0,0) entry makes Delta theta_l vanish at the initial phases.

    Lines whose divisor is below ``floor * min(omega)`` are set to zero and
    listed in ``zeroed``; with ``strict`` a nonzero such line raises
    :class:`ResonanceObstructionError`.
    """
    om = tuple(comb.omega if omega is None else omega)
    t10, t20 = comb.theta0
    out, zeroed = [], []
    for l, tab in enumerate(phi.tables):
        n, m = tab.indices()
        div = n * om[0] + m * om[1]
        origin = (n == 0) & (m == 0)
        tiny = (np.abs(div) < floor * min(om)) & ~origin
        for i, j in zip(*np.nonzero(tiny)):
            c = abs(tab.coeffs[i, j])
            if c > noise:
                if strict:
                    raise ResonanceObstructionError(
                        f"small divisor at (n, m) = ({n[i, j]}, {m[i, j]}) for action {l + 1}",
                        line=(int(n[i, j]), int(m[i, j])))
                zeroed.append((l + 1, int(n[i, j]), int(m[i, j]), c))
        safe = np.where(tiny | origin, 1.0, div)
        th = np.where(tiny | origin, 0.0, tab.coeffs / (1j * safe))
        W = tab.window
        th[W, W] = -np.sum(th * np.exp(1j * (n * t10 + m * t20)))
        out.append(FourierTable(th, W))
    if zeroed:
        log.info("zeroed %d small-divisor lines", len(zeroed))
    return ThetaTables(tuple(out), om, (t10, t20), zeroed)


# ---------------------------------------------------------------------------
# first-order actions

def first_order_actions(theta: ThetaTables, comb: Combination, phased: bool = True):
    """Time spectra of v_l^(1) = r_l e^{i theta_l(t)} (1 + i Delta theta_l(t)),
    theta_l(t) = omega_l t + theta_l0, on the lines n omega1 + m omega2.

    Main lines r_l (1 + i theta~_l00); side lines
    i r_1 theta~_1,k-1,m e^{i((k-1) theta10 + m theta20)} and
    i r_2 theta~_2,k,m-1 e^{i(k theta10 + (m-1) theta20)}.
    The window grows by one to hold the shifted indices.  With
    ``phased=False`` the phase factors are dropped, giving the coefficients of
    v_l^(1) as a function of the torus phases (theta1, theta2).
    """
    W = theta.window
    t10, t20 = theta.theta0
    out = []
    for l, tab in enumerate(theta.tables):
        n, m = tab.indices()
        ph = np.exp(1j * (n * t10 + m * t20)) if phased else 1.0
        big = FourierTable.zeros(W + 1)
        src = 1j * comb.r[l] * tab.coeffs * ph
        if l == 0:
            big.coeffs[2:, 1:-1] = src      # k = n + 1
        else:
            big.coeffs[1:-1, 2:] = src      # m' = m + 1
        main = (1, 0) if l == 0 else (0, 1)
        big.coeffs[main[0] + W + 1, main[1] + W + 1] = comb.r[l] * (1 + 1j * tab[0, 0])
        out.append(big)
    return tuple(out)


def first_order_targets(theta: ThetaTables, comb: Combination):
    """v^(1) as a function of the torus phases (theta1, theta2)."""
    r1, r2 = comb.r

    def fn(t1, t2):
        t1 = np.asarray(t1, dtype=float)
        t2 = np.asarray(t2, dtype=float)
        d = theta.deviation(t1, t2)
        return np.stack([r1 * np.exp(1j * t1) * (1 + 1j * d[..., 0]),
                         r2 * np.exp(1j * t2) * (1 + 1j * d[..., 1])], axis=-1)
    return fn


def normalized_spectrum(tables, comb: Combination):
    """First-order action spectra relative to the rigid-rotation radius, with
    the main line shown as the unit rotation (the (0,0) deviation term only
    fixes the phase at the initial point)."""
    out = []
    for l, t in enumerate(tables):
        s = t * (1.0 / comb.r[l])
        W = s.window
        main = (1, 0) if l == 0 else (0, 1)
        s.coeffs[main[0] + W, main[1] + W] = 1.0
        out.append(s)
    return tuple(out)
