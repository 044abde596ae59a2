"""Functions on the 2-torus of angles: the action map v(state), its Newton
inverse, phase grids and 2-D Fourier tables."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .polyalg import (BasisLayout, TruncPoly, partial_derivative, real_to_resonance,
                      resonance_to_real)

TWO_PI = 2 * np.pi


class InversionError(RuntimeError):
    """Newton inversion of the action map failed."""

    def __init__(self, message, residual=np.nan, node=None):
        super().__init__(message)
        self.residual = residual
        self.node = node


# ---------------------------------------------------------------------------
# combination of chain rows

@dataclass(frozen=True)
class Combination:
    """v_l = sum_j a[l, j] w_j with w_j = rows[j] . Z, plus the rigid rotation
    (r_l, omega_l, theta_l0) it is associated with."""

    a: np.ndarray
    rows: np.ndarray
    layout: BasisLayout
    r: tuple = (1.0, 1.0)
    omega: tuple = (1.0, 1.0)
    theta0: tuple = (0.0, 0.0)

    def __post_init__(self):
        a = np.asarray(self.a, dtype=complex)
        if a.shape != (2, len(self.rows)):
            raise ValueError(f"a must be 2 x n_v, got {a.shape}")
        if np.linalg.matrix_rank(a) < 2:
            raise ValueError("combination coefficients must have rank 2")
        if min(self.r) <= 0:
            raise ValueError("radii must be positive")
        object.__setattr__(self, "a", a)

    @property
    def n_v(self):
        return len(self.rows)

    @property
    def action_rows(self) -> np.ndarray:
        """Coefficient rows of v_1, v_2 on the monomial basis."""
        return self.a @ self.rows

    def action_polys(self):
        return [TruncPoly(self.layout, c) for c in self.action_rows]

    def with_rotation(self, state0):
        """Same coefficients; radii and initial phases taken from ``state0``."""
        v = action_values(self, state0)
        return replace(self, r=(abs(v[0]), abs(v[1])),
                       theta0=(float(np.angle(v[0])), float(np.angle(v[1]))))

    def scaled(self, factors):
        f = np.asarray(factors, dtype=complex).reshape(2, 1)
        return replace(self, a=self.a * f)


def action_values(comb: Combination, state) -> np.ndarray:
    """(v1, v2) at a real state (batch axes allowed in front of the 4)."""
    z = real_to_resonance(state)
    return comb.layout.monomials(z) @ comb.action_rows.T


def chain_values(rows: np.ndarray, lay: BasisLayout, state) -> np.ndarray:
    z = real_to_resonance(state)
    return lay.monomials(z) @ np.asarray(rows).T


# ---------------------------------------------------------------------------
# Newton inversion

class _InverseSystem:
    """F(Z) = (v1 - t1, v2 - t2, v1c - t1*, v2c - t2*) over the resonance
    variables Z, with its holomorphic Jacobian."""

    def __init__(self, comb: Combination):
        lay = comb.layout
        polys = comb.action_polys()
        polys = polys + [p.conj_poly() for p in polys]
        coef = [p.coeffs for p in polys]
        const = [0.0] * 4
        for f in polys:
            for b in range(4):
                d = partial_derivative(f, b)
                coef.append(d.coeffs)
                const.append(d.constant)
        self.C = np.array(coef).T            # (D, 20)
        self.const = np.array(const)         # (20,)
        self.lay = lay

    def __call__(self, Z, targets):
        vals = self.lay.monomials(Z) @ self.C
        vals[..., 4:] += self.const[4:]
        F = vals[..., :4] - targets
        J = vals[..., 4:].reshape(Z.shape[:-1] + (4, 4))
        return F, J


def _full_targets(t):
    t = np.asarray(t, dtype=complex)
    return np.concatenate([t, np.conj(t)], axis=-1)


def _newton(system, Z0, targets, tol=1e-11, max_iter=50):
    """Damped Newton on a batch; returns (Z, residual, converged mask)."""
    Z = np.array(Z0, dtype=complex)
    T = _full_targets(targets)
    F, J = system(Z, T)
    res = np.abs(F).max(axis=-1)
    active = res > tol
    for _ in range(max_iter):
        if not active.any():
            break
        idx = np.nonzero(active)[0]
        try:
            step = np.linalg.solve(J[idx], F[idx][..., None])[..., 0]
        except np.linalg.LinAlgError:
            step = np.stack([np.linalg.lstsq(J[i], F[i], rcond=None)[0] for i in idx])
        lam = np.ones(len(idx))
        Zi = Z[idx]
        ri = res[idx]
        for _h in range(30):
            trial = Zi - lam[:, None] * step
            Ft, Jt = system(trial, T[idx])
            rt = np.abs(Ft).max(axis=-1)
            ok = (rt < ri) | (lam < 1e-6)
            if ok.all():
                break
            lam = np.where(ok, lam, lam * 0.5)
        Z[idx] = trial
        F[idx], J[idx], res[idx] = Ft, Jt, rt
        active = res > tol
    return Z, res, ~active


def invert_actions(comb: Combination, v1_target, v2_target, seed_state, tol=1e-11,
                   max_iter=50) -> np.ndarray:
    """Real state with v_l(state) = target_l, by Newton from ``seed_state``.

    Raises :class:`InversionError` when Newton stalls or the solution is not a
    real phase-space point (a sign of a fold of the action map).
    """
    system = _InverseSystem(comb)
    Z0 = real_to_resonance(np.asarray(seed_state, dtype=float))[None]
    t = np.array([[v1_target, v2_target]], dtype=complex)
    Z, res, ok = _newton(system, Z0, t, tol=tol, max_iter=max_iter)
    if not ok[0]:
        raise InversionError(f"Newton did not converge (residual {res[0]:.3e})", residual=res[0])
    return resonance_to_real(Z[0], tol=1e-6)


def invert_batch(comb: Combination, targets, seeds, tol=1e-11, max_iter=50, system=None):
    """Vectorized inversion; ``targets`` shape (K, 2), ``seeds`` shape (K, 4)."""
    system = system or _InverseSystem(comb)
    Z0 = real_to_resonance(np.asarray(seeds, dtype=float))
    Z, res, ok = _newton(system, Z0, targets, tol=tol, max_iter=max_iter)
    return Z, res, ok


# ---------------------------------------------------------------------------
# torus grids

@dataclass
class TorusGrid:
    theta1: np.ndarray           # (N1,)
    theta2: np.ndarray           # (N2,)
    states: np.ndarray           # (N1, N2, 4) real
    payload: dict = field(default_factory=dict)
    residual: float = 0.0

    @property
    def shape(self):
        return (len(self.theta1), len(self.theta2))

    def mesh(self):
        return np.meshgrid(self.theta1, self.theta2, indexing="ij")


def grid_phases(N: int) -> np.ndarray:
    return TWO_PI * np.arange(N) / N


def _wrap(d):
    return (d + np.pi) % TWO_PI - np.pi


TargetFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


def rigid_targets(comb: Combination) -> TargetFn:
    r1, r2 = comb.r

    def fn(t1, t2):
        return np.stack([r1 * np.exp(1j * np.asarray(t1)), r2 * np.exp(1j * np.asarray(t2))], axis=-1)
    return fn


def invert_on_grid(comb: Combination, target_fn: TargetFn, N1: int, N2: int, seed_state,
                   seed_phase=None, order: str = "row", tol=1e-11, max_iter=50) -> TorusGrid:
    """States x(theta1, theta2) solving v(x) = target_fn(theta1, theta2) on a
    uniform N1 x N2 grid.

    ``seed_state`` must solve the equations at ``seed_phase`` (default: the
    combination's initial phases).  The solution is continued from there to node
    (0, 0), swept along theta1 (``order="row"``) or theta2 (``"col"``) node by
    node, then extended across the other angle one line at a time.
    """
    if seed_phase is None:
        seed_phase = comb.theta0
    system = _InverseSystem(comb)
    th1, th2 = grid_phases(N1), grid_phases(N2)
    step = TWO_PI / max(N1, N2)

    # continuation from the seed phase to node (0, 0)
    d = -_wrap(np.asarray(seed_phase, dtype=float))
    nsteps = max(1, int(np.ceil(np.abs(d).max() / step)))
    state = np.asarray(seed_state, dtype=float)
    for k in range(1, nsteps + 1):
        ph = np.asarray(seed_phase) + d * k / nsteps
        state = _single(system, target_fn, ph[0], ph[1], state, tol, max_iter)

    states = np.zeros((N1, N2, 4))
    states[0, 0] = state
    first, other = (th1, th2) if order == "row" else (th2, th1)
    line = np.zeros((len(first), 4))
    line[0] = state
    for i in range(1, len(first)):
        ph = (first[i], 0.0) if order == "row" else (0.0, first[i])
        line[i] = _single(system, target_fn, ph[0], ph[1], line[i - 1], tol, max_iter)
    prev = line
    if order == "row":
        states[:, 0] = line
    else:
        states[0, :] = line
    worst = 0.0
    for k in range(1, len(other)):
        if order == "row":
            t1, t2 = th1, np.full(N1, th2[k])
        else:
            t1, t2 = np.full(N2, th1[k]), th2
        T = target_fn(t1, t2)
        Z, res, ok = invert_batch(comb, T, prev, tol=tol, max_iter=max_iter, system=system)
        if not ok.all():
            bad = int(np.argmax(~ok))
            node = (bad, k) if order == "row" else (k, bad)
            raise InversionError(
                f"inversion failed at grid node {node} (residual {res[bad]:.3e})",
                residual=float(res[bad]), node=node)
        cur = _to_real(Z, node_hint=k)
        worst = max(worst, float(res.max()))
        if order == "row":
            states[:, k] = cur
        else:
            states[k, :] = cur
        prev = cur
    return TorusGrid(th1, th2, states, residual=worst)


def _to_real(Z, node_hint=None):
    try:
        return resonance_to_real(Z, tol=1e-6)
    except ValueError as exc:
        raise InversionError(f"inversion left the real phase space near line {node_hint}: {exc}",
                             node=node_hint) from exc


def _single(system, target_fn, t1, t2, seed, tol, max_iter):
    T = target_fn(np.array([t1]), np.array([t2]))
    Z, res, ok = _newton(system, real_to_resonance(seed)[None], T, tol=tol, max_iter=max_iter)
    if not ok[0]:
        raise InversionError(
            f"inversion failed at phases ({t1:.4f}, {t2:.4f}) (residual {res[0]:.3e})",
            residual=float(res[0]), node=(float(t1), float(t2)))
    return _to_real(Z[0])


def sample_torus(comb: Combination, N1: int = 64, N2: int = 64, seed_state=None,
                 order: str = "row") -> TorusGrid:
    """Zeroth-order torus: invert v_l = r_l exp(i theta_l) on the grid and
    attach the chain values w_j at every node as payload ``"w"`` (N1, N2, n_v)."""
    if seed_state is None:
        raise ValueError("seed_state is required (a state with v(state) = r exp(i theta0))")
    grid = invert_on_grid(comb, rigid_targets(comb), N1, N2, seed_state, order=order)
    grid.payload["w"] = chain_values(comb.rows, comb.layout, grid.states)
    return grid


# ---------------------------------------------------------------------------
# Fourier tables

@dataclass
class FourierTable:
    """Coefficients c[n, m] of sum c_nm exp(i(n theta1 + m theta2)), |n|, |m| <= window."""

    coeffs: np.ndarray      # (2W+1, 2W+1), index [n + W, m + W]
    window: int
    energy: float = np.nan  # mean |f|^2 of the originating samples

    def __getitem__(self, nm):
        n, m = nm
        W = self.window
        if abs(n) > W or abs(m) > W:
            return 0.0 + 0.0j
        return complex(self.coeffs[n + W, m + W])

    @classmethod
    def zeros(cls, window):
        return cls(np.zeros((2 * window + 1, 2 * window + 1), dtype=complex), window)

    @classmethod
    def from_lines(cls, lines: dict, window: int):
        t = cls.zeros(window)
        for (n, m), c in lines.items():
            t.coeffs[n + window, m + window] = c
        return t

    def indices(self):
        k = np.arange(-self.window, self.window + 1)
        return np.meshgrid(k, k, indexing="ij")

    def copy(self):
        return FourierTable(self.coeffs.copy(), self.window, self.energy)

    def __add__(self, other):
        return FourierTable(self.coeffs + other.coeffs, self.window)

    def __mul__(self, s):
        return FourierTable(self.coeffs * s, self.window)

    __rmul__ = __mul__

    def without(self, n, m):
        t = self.copy()
        t.coeffs[n + self.window, m + self.window] = 0
        return t

    def top_lines(self, count=10, exclude=()):
        """[(n, m, coefficient)] sorted by decreasing magnitude."""
        W = self.window
        mag = np.abs(self.coeffs).copy()
        for n, m in exclude:
            mag[n + W, m + W] = -1
        flat = np.argsort(mag, axis=None)[::-1][:count]
        out = []
        for f in flat:
            i, j = np.unravel_index(f, mag.shape)
            out.append((int(i - W), int(j - W), complex(self.coeffs[i, j])))
        return out

    def frequencies(self, omega1, omega2):
        n, m = self.indices()
        return n * omega1 + m * omega2

    def write_csv(self, path, omega1=0.0, omega2=0.0, min_abs=0.0):
        n, m = self.indices()
        order = np.argsort(np.abs(self.coeffs), axis=None)[::-1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "m", "re", "im", "abs", "frequency"])
            for f in order:
                i, j = np.unravel_index(f, self.coeffs.shape)
                c = self.coeffs[i, j]
                if abs(c) < min_abs:
                    break
                w.writerow([int(n[i, j]), int(m[i, j]), repr(c.real), repr(c.imag),
                            repr(abs(c)), repr(n[i, j] * omega1 + m[i, j] * omega2)])


def max_window(N1, N2):
    return min(N1, N2) // 2 - 1


def fourier2d(samples, window: int | None = None) -> FourierTable:
    """2-D transform of samples on a uniform phase grid (last two axes are
    theta1, theta2), normalized so exp(i(n theta1 + m theta2)) -> 1 at (n, m)."""
    f = np.asarray(samples, dtype=complex)
    N1, N2 = f.shape[-2:]
    W = max_window(N1, N2) if window is None else min(window, max_window(N1, N2))
    F = np.fft.fft2(f) / (N1 * N2)
    k1 = np.arange(-W, W + 1) % N1
    k2 = np.arange(-W, W + 1) % N2
    coeffs = F[..., k1[:, None], k2[None, :]]
    return FourierTable(coeffs, W, energy=float(np.mean(np.abs(f) ** 2)))


def synthesize(table: FourierTable, theta1, theta2):
    """Evaluate the truncated series at arbitrary phases (broadcasting)."""
    t1 = np.asarray(theta1, dtype=float)
    t2 = np.asarray(theta2, dtype=float)
    k = np.arange(-table.window, table.window + 1)
    e1 = np.exp(1j * t1[..., None] * k)              # (..., K)
    e2 = np.exp(1j * t2[..., None] * k)
    return np.einsum("...n,nm,...m->...", e1, table.coeffs, e2)


def synthesize_grid(table: FourierTable, N1: int, N2: int):
    """Values on the uniform grid via inverse FFT."""
    W = table.window
    if W > max_window(N1, N2):
        raise ValueError("grid too coarse for the table window")
    F = np.zeros((N1, N2), dtype=complex)
    k1 = np.arange(-W, W + 1) % N1
    k2 = np.arange(-W, W + 1) % N2
    F[np.ix_(k1, k2)] = table.coeffs
    return np.fft.ifft2(F) * (N1 * N2)
