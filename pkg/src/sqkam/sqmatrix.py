"""Square matrix M with dZ/dt = M Z on the monomial basis, and its left
Jordan chains for an eigenvalue i*mu."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import ModelSpec
from .polyalg import BasisLayout, TruncPoly, layout

RESONANCE_TOL = 1e-9


class SingularChainError(RuntimeError):
    def __init__(self, message, degree=None):
        super().__init__(message)
        self.degree = degree


@dataclass(frozen=True)
class SquareMatrix:
    entries: np.ndarray
    layout: BasisLayout
    mu_x: float
    mu_y: float

    @property
    def dim(self):
        return self.layout.dim

    def diagonal(self):
        return np.diag(self.entries)

    def expected_diagonal(self):
        e = self.layout.exponents
        return 1j * ((e[:, 0] - e[:, 1]) * self.mu_x + (e[:, 2] - e[:, 3]) * self.mu_y)

    def block(self, deg_row, deg_col):
        return self.entries[self.layout.block(deg_row), self.layout.block(deg_col)]

    def dump_csv(self, path, preamble=None):
        """Nonzero entries as rows (row, col, re, im); ``preamble`` is an optional
        comment line written first."""
        rows, cols = np.nonzero(self.entries)
        with open(path, "w", newline="") as fh:
            if preamble:
                fh.write(f"# {preamble}\n")
            w = csv.writer(fh)
            w.writerow(["row", "col", "re", "im"])
            for r, c in zip(rows, cols):
                v = self.entries[r, c]
                w.writerow([int(r), int(c), repr(v.real), repr(v.imag)])


def build_square_matrix(model: ModelSpec, n_s: int) -> SquareMatrix:
    """Row i of M holds d(Z_i)/dt expanded on the basis and truncated at n_s."""
    if n_s < 1:
        raise ValueError("n_s must be >= 1")
    lay = layout(4, n_s)
    field_polys = model.field_in(n_s)
    index = lay._index
    M = np.zeros((lay.dim, lay.dim), dtype=complex)
    field_terms = [list(f.terms()) for f in field_polys]
    for i, e in enumerate(lay.exponents):
        for q in range(4):
            if e[q] == 0:
                continue
            base = e.copy()
            base[q] -= 1
            for f_e, c in field_terms[q]:
                tgt = base + np.asarray(f_e)
                if tgt.sum() > n_s:
                    continue
                M[i, index[tuple(int(k) for k in tgt)]] += e[q] * c
    return SquareMatrix(M, lay, model.mu_x, model.mu_y)


@dataclass(frozen=True)
class JordanChain:
    """Rows u_0..u_{k-1} with u_j M = i mu u_j + u_{j+1}, u_k = 0."""

    eigenvalue: complex
    rows: np.ndarray
    layout: BasisLayout
    label: str = ""

    @property
    def length(self):
        return len(self.rows)

    def poly(self, j) -> TruncPoly:
        return TruncPoly(self.layout, self.rows[j])

    def residuals(self, M: SquareMatrix) -> np.ndarray:
        """Relative residual of each chain relation."""
        out = []
        for j in range(self.length):
            nxt = self.rows[j + 1] if j + 1 < self.length else 0.0
            r = self.rows[j] @ M.entries - self.eigenvalue * self.rows[j] - nxt
            out.append(np.linalg.norm(r) / max(np.linalg.norm(self.rows[j]), 1e-300))
        return np.array(out)


def chain_time_derivative(chain: JordanChain, j: int) -> TruncPoly:
    """Jordan approximation of dw_j/dt: i mu u_j + u_{j+1}."""
    if not 0 <= j < chain.length:
        raise IndexError(f"chain row {j} out of range 0..{chain.length - 1}")
    row = chain.eigenvalue * chain.rows[j]
    if j + 1 < chain.length:
        row = row + chain.rows[j + 1]
    return TruncPoly(chain.layout, row)


@dataclass(frozen=True)
class ChainPair:
    chain_x: JordanChain
    chain_y: JordanChain
    others: tuple = field(default=())

    def rows(self, n_v: int) -> np.ndarray:
        """The covectors used in a combination: w_x0, w_y0, then w_x1, w_y1, ..."""
        if n_v % 2:
            raise ValueError("n_v must be even")
        out = []
        for k in range(n_v // 2):
            for ch in (self.chain_x, self.chain_y):
                out.append(ch.rows[k] if k < ch.length else np.zeros(ch.layout.dim, complex))
        return np.array(out)

    def dump_csv(self, path, preamble=None):
        with open(path, "w", newline="") as fh:
            if preamble:
                fh.write(f"# {preamble}\n")
            w = csv.writer(fh)
            w.writerow(["chain", "row", "col", "re", "im"])
            for ch in (self.chain_x, self.chain_y) + tuple(self.others):
                for j, r in enumerate(ch.rows):
                    for c in np.nonzero(r)[0]:
                        w.writerow([ch.label, j, int(c), repr(r[c].real), repr(r[c].imag)])


def resonant_positions(M: SquareMatrix, eigenvalue: complex, tol=RESONANCE_TOL) -> np.ndarray:
    return np.nonzero(np.abs(M.diagonal() - eigenvalue) < tol)[0]


def gauged_chain(M: SquareMatrix, eigenvalue: complex, lead: int, label: str = "",
                 tol=RESONANCE_TOL) -> JordanChain:
    """Chain whose lead row lies in the generalized left eigenspace and has, on
    the resonant monomials, coefficient 1 at ``lead`` and 0 elsewhere.

    Columns are processed in basis order (ascending degree).  At a resonant
    column the lead coefficient is fixed by the gauge and every later chain row
    follows from the columns already known; at a non-resonant column each row is
    back-substituted from the next one, starting at the chain end.
    """
    N = M.entries - eigenvalue * np.eye(M.dim)
    res = set(resonant_positions(M, eigenvalue, tol).tolist())
    if lead not in res:
        raise ValueError(f"position {lead} is not resonant with {eigenvalue}")
    K = len(res) + 1
    U = np.zeros((K + 1, M.dim), dtype=complex)
    for j in range(M.dim):
        known = U[:K, :j] @ N[:j, j]
        if j in res:
            U[0, j] = 1.0 if j == lead else 0.0
            U[1:K, j] = known[: K - 1]
            if abs(known[K - 1]) > 1e-10 * max(1.0, np.abs(U).max()):
                raise SingularChainError(
                    f"chain does not terminate at column {j}", degree=int(M.layout.degrees[j]))
        else:
            d = N[j, j]
            for k in range(K - 1, -1, -1):
                U[k, j] = (U[k + 1, j] - known[k]) / d
    scale = np.abs(U).max(axis=1)
    length = int(np.sum(scale > 1e-13 * max(scale[0], 1e-300)))
    if np.any(scale[length:] > 1e-13 * scale[0]):
        raise SingularChainError("chain has interior zero rows")
    return JordanChain(eigenvalue, U[:length].copy(), M.layout, label)


def gauge_project(chain: JordanChain, M: SquareMatrix) -> JordanChain:
    """Re-impose the gauge on a chain's lead row (zero resonant coefficients
    except the degree-1 one, which is scaled to 1) and rebuild the chain."""
    res = resonant_positions(M, chain.eigenvalue)
    lead_row = chain.rows[0]
    deg1 = [p for p in res if M.layout.degrees[p] == 1 and abs(lead_row[p]) > 0]
    if len(deg1) != 1:
        raise ValueError("lead row must have exactly one degree-1 resonant term")
    return gauged_chain(M, chain.eigenvalue, deg1[0], chain.label)


def jordan_structure(M: SquareMatrix, eigenvalue: complex) -> list[int]:
    """Jordan block sizes (descending) of M restricted to the generalized
    eigenspace of ``eigenvalue``."""
    res = resonant_positions(M, eigenvalue)
    B = np.array([gauged_chain(M, eigenvalue, p).rows[0] for p in res])
    N = M.entries - eigenvalue * np.eye(M.dim)
    # B N = T B, coordinates from the resonant columns (B[:, res] = identity)
    T = (B @ N)[:, res]
    n = len(res)
    ranks = [n]
    P = np.eye(n)
    while ranks[-1] > 0:
        P = P @ T
        ranks.append(np.linalg.matrix_rank(P, tol=1e-9 * max(1.0, np.abs(T).max())))
        if len(ranks) > n + 2:
            break
    # number of blocks of size >= k is rank(T^{k-1}) - rank(T^k)
    at_least = [ranks[k - 1] - ranks[k] for k in range(1, len(ranks))]
    sizes = []
    for k in range(len(at_least), 0, -1):
        exact = at_least[k - 1] - (at_least[k] if k < len(at_least) else 0)
        sizes += [k] * exact
    return sizes


def jordan_chains(M: SquareMatrix, mu: float | None = None, include_short: bool = False) -> ChainPair:
    """The two longest chains with eigenvalue i*mu, gauged so the lead rows
    start with exactly z_x (resp. z_y)."""
    if mu is None:
        if not np.isclose(M.mu_x, M.mu_y):
            raise ValueError("off resonance: pass mu explicitly or use chains_off_resonance")
        mu = M.mu_x
    lam = 1j * mu
    lay = M.layout
    ix = lay.index_of((1, 0, 0, 0))
    iy = lay.index_of((0, 0, 1, 0))
    res = resonant_positions(M, lam)
    if ix not in res and iy not in res:
        raise ValueError(f"i*{mu} is not a linear eigenvalue of M")
    chains = {}
    for name, pos in (("x", ix), ("y", iy)):
        if pos in res:
            chains[name] = gauged_chain(M, lam, pos, label=name)
    if len(chains) != 2:
        raise ValueError("only one linear mode has eigenvalue i*mu; the system is off "
                         "resonance, use chains_off_resonance")
    others = ()
    if include_short:
        others = tuple(gauged_chain(M, lam, p, label=f"m{p}") for p in res
                       if lay.degrees[p] > 1)
    return ChainPair(chains["x"], chains["y"], others)


def chains_off_resonance(M: SquareMatrix) -> ChainPair:
    """Independent x- and y-chains for distinct linear frequencies."""
    lay = M.layout
    cx = gauged_chain(M, 1j * M.mu_x, lay.index_of((1, 0, 0, 0)), label="x")
    cy = gauged_chain(M, 1j * M.mu_y, lay.index_of((0, 0, 1, 0)), label="y")
    return ChainPair(cx, cy)


def diagonal_audit(M: SquareMatrix) -> float:
    return float(np.max(np.abs(M.diagonal() - M.expected_diagonal())))


def lower_part_max(M: SquareMatrix) -> float:
    return float(np.max(np.abs(np.tril(M.entries, -1)), initial=0.0))


def write_matrix_report(M: SquareMatrix, pair: ChainPair, out_dir, preamble=None) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    M.dump_csv(out / "matrix.csv", preamble)
    pair.dump_csv(out / "chains.csv", preamble)
    return {
        "dimension": M.dim,
        "diagonal_audit": diagonal_audit(M),
        "lower_triangle_max": lower_part_max(M),
        "chain_lengths": [pair.chain_x.length, pair.chain_y.length],
        "chain_residuals": [float(pair.chain_x.residuals(M).max()),
                            float(pair.chain_y.residuals(M).max())],
        "jordan_structure": jordan_structure(M, 1j * M.mu_x) if np.isclose(M.mu_x, M.mu_y) else None,
    }
