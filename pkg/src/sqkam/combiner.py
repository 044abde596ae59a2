"""Linear combinations of chain rows: the small-amplitude bootstrap and the
constrained fluctuation minimizer."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .sqmatrix import ChainPair
from .torusmap import Combination, FourierTable, chain_values

JITTER = 1e-14
MAX_CONDITION = 1e12
MAIN_LINES = ((1, 0), (0, 1))


class BootstrapError(RuntimeError):
    pass


class RankDeficiencyError(RuntimeError):
    pass


@dataclass(frozen=True)
class Bootstrap:
    combination: Combination
    phi: np.ndarray            # complex frequency shifts, ascending real part
    residual: float            # max ||(P^-1 Q - i phi) A||


def initial_combination(pair: ChainPair, state0, mu: float | None = None) -> Bootstrap:
    """Trial combination from the chain values at one state.

    With w_j0, w_j1, w_j2 the first three chain rows of the x- and y-chains at
    ``state0``, the two modes are the eigenvectors of P^-1 Q where
    P = [[w_x0, w_y0], [w_x1, w_y1]] and Q = [[w_x1, w_y1], [w_x2, w_y2]]; the
    eigenvalues are i phi, with omega = mu + phi.  Rows of ``a`` are ordered
    by ascending Re omega.
    """
    if mu is None:
        mu = pair.chain_x.eigenvalue.imag
    lay = pair.chain_x.layout
    w = chain_values(pair.rows(6), lay, state0)
    P = np.array([[w[0], w[1]], [w[2], w[3]]])
    Q = np.array([[w[2], w[3]], [w[4], w[5]]])
    cond = np.linalg.cond(P)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise BootstrapError(
            f"bootstrap matrix is singular (condition {cond:.2e}); start from a smaller "
            "amplitude and continue the solution outward")
    R = np.linalg.solve(P, Q)
    lam, V = np.linalg.eig(R)
    phi = lam / 1j
    order = np.argsort(phi.real)
    phi, V = phi[order], V[:, order]
    residual = float(np.max(np.abs(R @ V - V * lam[order])))
    a = (V / np.linalg.norm(V, axis=0)).T
    omega = tuple(float(mu + p.real) for p in phi)
    comb = Combination(a, pair.rows(2), lay, omega=omega).with_rotation(state0)
    return Bootstrap(comb, phi, residual)


# ---------------------------------------------------------------------------
# fluctuation minimization

@dataclass(frozen=True)
class GramPair:
    F1: np.ndarray
    F2: np.ndarray


@dataclass
class FluctuationReport:
    g0: float
    g1: float
    g2: float
    tables: tuple              # (v1 table, v2 table)
    side_ratio: tuple          # largest side line / main line, per action

    def write_csv(self, path, omega1, omega2, top=40):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["action", "n", "m", "frequency", "abs"])
            for l, t in enumerate(self.tables, start=1):
                for n, m, c in t.top_lines(top):
                    w.writerow([l, n, m, repr(n * omega1 + m * omega2), repr(abs(c))])


def _stack(tables):
    W = tables[0].window
    if any(t.window != W for t in tables):
        raise ValueError("tables must share a window")
    return np.array([t.coeffs.ravel() for t in tables]), W


def gram_matrices(tables) -> GramPair:
    """F_jk = sum over lines of conj(w_j) w_k, without (1,0) for F1 and
    without (0,1) for F2."""
    Wt, W = _stack(tables)
    out = []
    for n, m in MAIN_LINES:
        keep = np.ones(Wt.shape[1], bool)
        keep[(n + W) * (2 * W + 1) + (m + W)] = False
        X = Wt[:, keep]
        F = np.conj(X) @ X.T
        out.append(0.5 * (F + F.conj().T))
    return GramPair(*out)


def _constrained(F, c):
    """argmin a^H F a subject to c . a = 1."""
    n = len(c)
    scale = max(np.real(np.trace(F)) / n, 1e-300)
    Fj = F + JITTER * scale * np.eye(n)
    cond = np.linalg.cond(Fj)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise RankDeficiencyError(f"Gram matrix condition {cond:.2e} exceeds {MAX_CONDITION:.0e}; reduce n_v")
    try:
        L = np.linalg.cholesky(Fj)
        y = np.linalg.solve(L.conj().T, np.linalg.solve(L, np.conj(c)))
    except np.linalg.LinAlgError:
        y = np.linalg.solve(Fj, np.conj(c))
    den = c @ y
    if abs(den) == 0:
        raise RankDeficiencyError("main line is absent from every table")
    return y / den


def minimize_fluctuation(tables, n_v: int | None = None):
    """Coefficients a (2 x n_v) minimizing g0 with the main lines of v1, v2
    fixed to 1, and the resulting :class:`FluctuationReport`."""
    tables = list(tables)
    if n_v is not None:
        tables = tables[:n_v]
    if len(tables) == 1:
        t = tables[0]
        a = np.array([[1 / t[1, 0]], [1 / t[0, 1]]])
        return a, fluctuation_of(tables, a)
    Wt, W = _stack(tables)
    G = gram_matrices(tables)
    rows = []
    for (n, m), F in zip(MAIN_LINES, (G.F1, G.F2)):
        c = Wt[:, (n + W) * (2 * W + 1) + (m + W)]
        rows.append(_constrained(F, c))
    a = np.array(rows)
    return a, fluctuation_of(tables, a)


def action_tables(tables, a):
    Wt, W = _stack(tables)
    V = np.asarray(a) @ Wt
    return tuple(FourierTable(v.reshape(2 * W + 1, 2 * W + 1), W) for v in V)


def fluctuation_of(tables, a) -> FluctuationReport:
    """g0 = g1 + g2, the summed squared magnitudes of every line of v1, v2
    other than (1,0) and (0,1) respectively."""
    v = action_tables(tables, a)
    gs, ratios = [], []
    for t, (n, m) in zip(v, MAIN_LINES):
        main = abs(t[n, m])
        side = t.without(n, m)
        gs.append(float(np.sum(np.abs(side.coeffs) ** 2)))
        ratios.append(float(np.abs(side.coeffs).max() / main) if main > 0 else np.inf)
    return FluctuationReport(gs[0] + gs[1], gs[0], gs[1], v, tuple(ratios))


def constraint_preserving_direction(tables, rng, n_v=None):
    """Random unit perturbation of a that keeps both main-line constraints."""
    tables = list(tables)[: n_v or len(tables)]
    Wt, W = _stack(tables)
    out = []
    for n, m in MAIN_LINES:
        c = Wt[:, (n + W) * (2 * W + 1) + (m + W)]
        d = rng.normal(size=len(c)) + 1j * rng.normal(size=len(c))
        d -= np.conj(c) * (c @ d) / (c @ np.conj(c))
        out.append(d)
    d = np.array(out)
    return d / np.linalg.norm(d)

