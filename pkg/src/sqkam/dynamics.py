"""Forward integration oracle, Poincare sections and spectral frequency
estimation."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.integrate._ivp import dop853_coefficients as _dop
from scipy.optimize import minimize_scalar

from .model import ModelError, ModelSpec

ENERGY_GATE = 1e-8

_A = _dop.A[:_dop.N_STAGES, :_dop.N_STAGES]
_B = _dop.B
_C = _dop.C[:_dop.N_STAGES]


class IntegrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray        # (T, 4)
    energy0: float
    dt: float
    energy_drift: float

    def column(self, name):
        return self.states[:, ("x", "px", "y", "py").index(name)]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "px", "y", "py"])
            for t, s in zip(self.times, self.states):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in s])


def rk8_step(model: ModelSpec, y, h):
    """One explicit 8th-order Runge-Kutta step (Dormand-Prince 8(5,3) weights)
    for states of shape (4, ...); ``h`` may broadcast against the batch."""
    K = []
    for s in range(_dop.N_STAGES):
        yi = y
        for j in range(s):
            if _A[s, j] != 0.0:
                yi = yi + (h * _A[s, j]) * K[j]
        K.append(model.rhs(yi))
    out = y
    for s in range(_dop.N_STAGES):
        if _B[s] != 0.0:
            out = out + (h * _B[s]) * K[s]
    return out


def _run(model, y0, n_steps, dt, stride=1):
    y = np.array(y0, dtype=float)
    out = np.empty((n_steps // stride + 1,) + y.shape)
    out[0] = y
    k = 1
    for i in range(1, n_steps + 1):
        y = rk8_step(model, y, dt)
        if i % stride == 0:
            out[k] = y
            k += 1
    if not np.all(np.isfinite(y)):
        raise IntegrationError("state left the finite range (escape orbit?)")
    return out


def _drift(model, states, e0):
    e = model.energy(np.moveaxis(states, -1 if states.ndim == 2 and states.shape[-1] == 4 else 0, 0))
    scale = max(abs(e0), 1e-300)
    return float(np.max(np.abs(e - e0)) / scale)


def integrate(model: ModelSpec, state0, t_end: float, dt: float | None = None,
              gate: float = ENERGY_GATE, min_dt: float = 1e-5, stride: int = 1) -> Trajectory:
    """Fixed-step RK8 trajectory from ``state0`` to ``t_end``.

    Without ``dt`` the step starts at 0.1 and is halved until the relative
    energy drift over the whole run stays below ``gate``.  Models without a
    Hamiltonian skip the gate.
    """
    y0 = np.asarray(state0, dtype=float)
    has_h = model.hamiltonian is not None
    e0 = float(model.energy(y0)) if has_h else float("nan")
    h = 0.1 if dt is None else float(dt)
    while True:
        n = max(1, int(round(t_end / h)))
        h_eff = t_end / n
        states = _run(model, y0, n, h_eff, stride)
        drift = _drift(model, states.T, e0) if has_h and e0 != 0 else 0.0
        if not has_h or e0 == 0 or drift < gate:
            break
        if dt is not None:
            raise IntegrationError(f"energy drift {drift:.2e} exceeds {gate:.0e} at dt={h_eff}")
        h /= 2
        if h < min_dt:
            raise IntegrationError("step size underflow while enforcing the energy gate")
    times = np.arange(states.shape[0]) * h_eff * stride
    return Trajectory(times, states, e0, h_eff, drift)


def integrate_many(model: ModelSpec, states0, t_end: float, dt: float, stride: int = 1):
    """Batch of trajectories with a common fixed step; returns (times, states
    of shape (T, B, 4))."""
    y0 = np.asarray(states0, dtype=float).T       # (4, B)
    n = max(1, int(round(t_end / dt)))
    h = t_end / n
    out = _run(model, y0, n, h, stride)           # (T, 4, B)
    return np.arange(out.shape[0]) * h * stride, np.transpose(out, (0, 2, 1))


# ---------------------------------------------------------------------------
# Poincare section

@dataclass(frozen=True)
class SectionPoints:
    y: np.ndarray
    py: np.ndarray
    times: np.ndarray
    direction: int = 1

    def __len__(self):
        return len(self.y)

    def write_csv(self, path, tag="oracle"):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["tag", "y", "py", "t"])
            for a, b, t in zip(self.y, self.py, self.times):
                w.writerow([tag, repr(float(a)), repr(float(b)), repr(float(t))])


def poincare_section(model: ModelSpec, traj: Trajectory, direction: int = 1,
                     tol: float = 1e-10) -> SectionPoints:
    """Crossings of x = 0 with sign(dx/dt) = ``direction``, each polished by
    Newton on the step length of a single RK8 step from the bracketing sample."""
    x = traj.states[:, 0]
    if direction > 0:
        idx = np.nonzero((x[:-1] < 0) & (x[1:] >= 0))[0]
    else:
        idx = np.nonzero((x[:-1] > 0) & (x[1:] <= 0))[0]
    if len(idx) == 0:
        return SectionPoints(np.empty(0), np.empty(0), np.empty(0), direction)
    base = traj.states[idx].T                       # (4, K)
    frac = x[idx] / (x[idx] - x[idx + 1])
    tau = frac * traj.dt
    for _ in range(20):
        s = rk8_step(model, base, tau)
        f = s[0]
        if np.max(np.abs(f)) < tol:
            break
        tau = tau - f / model.rhs(s)[0]
    s = rk8_step(model, base, tau)
    return SectionPoints(s[2], s[3], traj.times[idx] + tau, direction)


def energy_limit_curve(E: float, n: int = 400, model: ModelSpec | None = None):
    """Boundary p_y(y) of the allowed region on x = 0 (p_x = 0), upper half.
    Only the Henon-Heiles closed form is provided."""
    if model is not None and model.name != "henon-heiles":
        raise ModelError("energy limit curve is only available for the built-in model")
    # 1/2 p_y^2 + 1/2 y^2 - 1/3 y^3 <= E; bounded branch between the two roots
    roots = np.sort(np.roots([-1 / 3, 0.5, 0.0, -E]).real)
    y = np.linspace(roots[0], roots[1], n)
    py = np.sqrt(np.clip(2 * E - y**2 + 2 * y**3 / 3, 0, None))
    return y, py


def inside_energy_limit(E, y, py, tol=1e-12):
    return 0.5 * np.asarray(py) ** 2 + 0.5 * np.asarray(y) ** 2 - np.asarray(y) ** 3 / 3 <= E + tol


# ---------------------------------------------------------------------------
# frequency analysis

def _hann(n):
    k = np.arange(n)
    return 0.5 * (1 - np.cos(2 * np.pi * k / n))


def _proj(signal, win, t, w):
    return np.sum(signal * win * np.exp(-1j * w * t)) / np.sum(win)


def fundamental_frequencies(signal, dt: float, count: int = 5, t0: float = 0.0):
    """Leading spectral lines of a uniformly sampled complex signal.

    Each peak is located on the Hann-windowed FFT, refined by a quadratic fit
    of the log amplitude over the three bins around it, then polished by
    maximizing the windowed projection.  Found lines are subtracted before the
    next search (with amplitudes from a joint least-squares fit).

    Returns ``[(frequency, amplitude), ...]`` sorted by amplitude.
    """
    f = np.asarray(signal, dtype=complex)
    n = len(f)
    t = t0 + dt * np.arange(n)
    win = _hann(n)
    resid = f.copy()
    freqs = []
    pad = 4 * n
    bin_w = 2 * np.pi / (pad * dt)
    for _ in range(count):
        spec = np.abs(np.fft.fft(resid * win, pad))
        k = int(np.argmax(spec))
        la, lb, lc = np.log(spec[[(k - 1) % pad, k, (k + 1) % pad]] + 1e-300)
        den = la - 2 * lb + lc
        delta = 0.5 * (la - lc) / den if den != 0 else 0.0
        kk = k + delta
        if kk > pad / 2:
            kk -= pad
        w0 = kk * bin_w
        res = minimize_scalar(lambda w: -abs(_proj(resid, win, t, w)),
                              bracket=(w0 - bin_w, w0, w0 + bin_w), tol=1e-12)
        w = float(res.x) if abs(res.x - w0) < 2 * bin_w else w0
        freqs.append(w)
        # joint amplitudes, windowed least squares
        E = np.exp(1j * np.outer(t, freqs))
        sw = np.sqrt(win)
        amps = np.linalg.lstsq(E * sw[:, None], f * sw, rcond=None)[0]
        resid = f - E @ amps
    out = [(float(w), float(abs(a))) for w, a in zip(freqs, amps)]
    return sorted(out, key=lambda p: -p[1])


def line_amplitudes(signal, dt: float, freqs, t0: float = 0.0):
    """Complex amplitudes of given frequencies by Hann-weighted least squares."""
    f = np.asarray(signal, dtype=complex)
    t = t0 + dt * np.arange(len(f))
    sw = np.sqrt(_hann(len(f)))
    E = np.exp(1j * np.outer(t, np.asarray(freqs, dtype=float)))
    return np.linalg.lstsq(E * sw[:, None], f * sw, rcond=None)[0]


def frequency_drift(model: ModelSpec, state0, t_end: float = 2000.0, dt: float = 0.05):
    """Relative change of the leading frequency of x - i p_x between the two
    halves of a trajectory; near zero for tori, finite for chaotic orbits."""
    traj = integrate(model, state0, t_end, dt=dt, gate=np.inf)
    z = traj.states[:, 0] - 1j * traj.states[:, 1]
    h = len(z) // 2
    a = fundamental_frequencies(z[:h], traj.dt, count=1)[0][0]
    b = fundamental_frequencies(z[h:2 * h], traj.dt, count=1)[0][0]
    return abs(a - b) / abs(a)
