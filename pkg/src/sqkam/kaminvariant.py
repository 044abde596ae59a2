"""Invariants built from a converged first-order solution:
vbar0_l = vbar_l exp(-i sum theta~_lnm vbar1^n vbar2^m), with vbar_l = v_l / r_l
and negative n, m meaning reciprocal powers."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .perturbation import ThetaTables
from .polyalg import TruncPoly, layout, mul_trunc, power, real_to_resonance
from .torusmap import Combination, action_values

LAURENT_FLOOR = 1e-6


class LaurentSingularityError(ValueError):
    pass


@dataclass(frozen=True)
class KamInvariant:
    theta: ThetaTables
    combination: Combination

    @property
    def radii(self):
        return self.combination.r

    def normalized_actions(self, states):
        return action_values(self.combination, states) / np.asarray(self.combination.r)

    @classmethod
    def from_solve(cls, result):
        fin = result.final
        return cls(fin.theta, fin.used)


def forward_transform(theta: ThetaTables, theta1, theta2):
    """vbar_l^(1) = e^{i theta_l} exp(i Delta theta_l(theta1, theta2))."""
    t1 = np.asarray(theta1, dtype=float)
    t2 = np.asarray(theta2, dtype=float)
    d = theta.deviation(t1, t2)
    return np.stack([np.exp(1j * t1 + 1j * d[..., 0]), np.exp(1j * t2 + 1j * d[..., 1])], axis=-1)


def linearized_transform(theta: ThetaTables, theta1, theta2):
    """Same to first order: e^{i theta_l} (1 + i Delta theta_l)."""
    t1 = np.asarray(theta1, dtype=float)
    t2 = np.asarray(theta2, dtype=float)
    d = theta.deviation(t1, t2)
    return np.stack([np.exp(1j * t1) * (1 + 1j * d[..., 0]), np.exp(1j * t2) * (1 + 1j * d[..., 1])], axis=-1)


def laurent_sum(table, u1, u2):
    """sum c_nm u1^n u2^m over the table window, u nonzero."""
    W = table.window
    k = np.arange(-W, W + 1)
    p1 = np.asarray(u1)[..., None] ** k
    p2 = np.asarray(u2)[..., None] ** k
    return np.einsum("...n,nm,...m->...", p1, table.coeffs, p2)


def invariant_from_actions(theta: ThetaTables, vbar):
    """vbar0 from normalized actions ``vbar`` of shape (..., 2)."""
    vbar = np.asarray(vbar, dtype=complex)
    small = np.abs(vbar).min() if vbar.size else 1.0
    if small < LAURENT_FLOOR:
        raise LaurentSingularityError(f"|vbar| = {small:.2e} is too close to zero for the reciprocal powers")
    u1, u2 = vbar[..., 0], vbar[..., 1]
    s = [laurent_sum(t, u1, u2) for t in theta.tables]
    return np.stack([u1 * np.exp(-1j * s[0]), u2 * np.exp(-1j * s[1])], axis=-1)


def kam_values(inv: KamInvariant, states):
    """(vbar01, vbar02) at real states of shape (..., 4)."""
    return invariant_from_actions(inv.theta, inv.normalized_actions(states))


def radius_fluctuation(values):
    """Standard deviation of |values| over its mean, per column."""
    a = np.abs(np.asarray(values))
    return a.std(axis=0) / a.mean(axis=0)


# ---------------------------------------------------------------------------
# power-series comparison

def _action_polys(inv: KamInvariant, order: int):
    lay = layout(4, order)
    comb = inv.combination
    return [TruncPoly(comb.layout, row / r).with_layout(lay)
            for row, r in zip(comb.action_rows, comb.r)]


def _series_polys(inv: KamInvariant, order: int):
    """vbar0_l as polynomials truncated at total degree ``order`` in the phase
    space variables.  Reciprocal powers vbar_l^-k are replaced by the
    conjugate polynomials (equal to 1/vbar_l on |vbar_l| = 1)."""
    lay = layout(4, order)
    v = _action_polys(inv, order)
    vc = [p.conj_poly() for p in v]
    pw = []
    for p, pc in zip(v, vc):
        pos = [None] + [power(p, k) for k in range(1, order + 1)]
        neg = [None] + [power(pc, k) for k in range(1, order + 1)]
        pw.append((pos, neg))

    def pick(l, k):
        if k == 0:
            return None
        pos, neg = pw[l]
        return pos[k] if k > 0 else neg[-k]

    out = []
    W = inv.theta.window
    for l, tab in enumerate(inv.theta.tables):
        const = tab[0, 0]
        S = TruncPoly.zero(lay)
        lim = min(W, order)
        for n in range(-lim, lim + 1):
            inner = TruncPoly.zero(lay)
            for m in range(-lim, lim + 1):
                if m == 0 or abs(n) + abs(m) > order or tab[n, m] == 0:
                    continue
                inner = inner + tab[n, m] * pick(1, m)
            if n == 0:
                S = S + inner
                continue
            S = S + tab[n, 0] * pick(0, n)
            if np.any(inner.coeffs):
                S = S + mul_trunc(pick(0, n), inner)
        # exp(-i (const + S)) = exp(-i const) (1 + sum_k (-i S)^k / k!)
        acc = TruncPoly.zero(lay)
        cur = None
        for k in range(1, order + 1):
            cur = (-1j * S) if cur is None else mul_trunc(cur, -1j * S)
            if not np.any(cur.coeffs):
                break
            acc = acc + cur * (1.0 / math.factorial(k))
        f = v[l] + mul_trunc(v[l], acc)
        out.append(f * np.exp(-1j * const))
    return out


def taylor_values(inv: KamInvariant, order: int, states, chunk: int = 2000):
    """Power-series form of the invariant at total order ``order``."""
    polys = _series_polys(inv, order)
    lay = polys[0].layout
    C = np.array([p.coeffs for p in polys]).T
    Z = real_to_resonance(np.asarray(states, dtype=float))
    flat = Z.reshape(-1, 4)
    out = np.empty((len(flat), 2), dtype=complex)
    for s in range(0, len(flat), chunk):
        out[s:s + chunk] = lay.monomials(flat[s:s + chunk]) @ C
    return out.reshape(Z.shape[:-1] + (2,))


def taylor_compare(inv: KamInvariant, orders, states):
    """Radius fluctuation of the power-series invariant for each order, next
    to the exponential form.  Returns (orders, fluct (len, 2), exp_fluct (2,))."""
    if max(orders) > 20:
        raise ValueError("orders above 20 are not supported")
    exp_fl = radius_fluctuation(kam_values(inv, states))
    fl = np.array([radius_fluctuation(taylor_values(inv, k, states)) for k in orders])
    return list(orders), fl, exp_fl


def scaled_series_values(inv: KamInvariant, order: int, states, samples: int = 128, rho: float = 0.5):
    """Independent route to :func:`taylor_values`: the degree-k parts of
    F(lambda) = vbar0(lambda Z) (reciprocals replaced by conjugate polynomials)
    from a discrete Cauchy integral over |lambda| = rho, summed up to ``order``."""
    comb = inv.combination
    Z = real_to_resonance(np.asarray(states, dtype=float))
    lam = rho * np.exp(2j * np.pi * np.arange(samples) / samples)
    lay = comb.layout
    rows = comb.action_rows / np.asarray(comb.r)[:, None]
    vals = []
    for L in lam:
        mon = lay.monomials(L * Z)
        v = mon @ rows.T
        vc = mon @ np.array([TruncPoly(lay, r).conj_poly().coeffs for r in rows]).T
        outs = []
        for l, tab in enumerate(inv.theta.tables):
            W = tab.window
            k = np.arange(-W, W + 1)
            p1 = np.where(k >= 0, v[..., 0:1] ** np.abs(k), vc[..., 0:1] ** np.abs(k))
            p2 = np.where(k >= 0, v[..., 1:2] ** np.abs(k), vc[..., 1:2] ** np.abs(k))
            s = np.einsum("...n,nm,...m->...", p1, tab.coeffs, p2)
            outs.append(v[..., l] * np.exp(-1j * s))
        vals.append(np.stack(outs, axis=-1))
    vals = np.array(vals)                                  # (samples, ..., 2)
    coef = np.fft.fft(vals, axis=0) / samples              # coefficient of lambda^k at index k
    k = np.arange(samples)
    scale = rho ** (-k)
    keep = k <= order
    return np.tensordot(scale[keep], coef[keep], axes=(0, 0))
