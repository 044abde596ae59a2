"""Iterative solve for a pair of action-angle variables on one torus, amplitude
continuation, and scans along a line of initial conditions."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .combiner import (BootstrapError, RankDeficiencyError, initial_combination,
                       minimize_fluctuation)
from .model import InfeasibleEnergyError, ModelSpec, initial_state
from .perturbation import (DivisionBlowupError, ResonanceObstructionError, first_order_actions,
                           first_order_targets, normalized_spectrum, phi_fields, theta_tables,
                           update_frequencies)
from .sqmatrix import ChainPair, build_square_matrix, jordan_chains
from .torusmap import (Combination, FourierTable, InversionError, chain_values, fourier2d,
                       invert_on_grid, sample_torus)

log = logging.getLogger(__name__)

RUNNING, CONVERGED, DIVERGED, OBSTRUCTED = "running", "converged", "diverged", "obstructed"


@dataclass(frozen=True)
class SolveConfig:
    n_s: int = 5
    n_v_schedule: tuple = (2, 4)
    grid: int = 64
    window: int = 40
    max_iter: int = 12
    tol_g: float = 1e-3
    tol_im: float = 1e-4
    tol_spectrum: float = 1e-2
    dominance_ratio: float = 2.0
    divergence_run: int = 3
    divisor_floor: float = 1e-3

    def __post_init__(self):
        if self.n_s < 1:
            raise ValueError("n_s must be >= 1")
        if not self.n_v_schedule or any(n not in (2, 4) for n in self.n_v_schedule):
            raise ValueError("n_v schedule entries must be 2 or 4")
        if min(self.tol_g, self.tol_im, self.tol_spectrum) <= 0:
            raise ValueError("tolerances must be positive")
        if self.grid < 8:
            raise ValueError("grid must have at least 8 nodes per angle")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")

    @property
    def effective_window(self):
        return min(self.window, self.grid // 2 - 1)


@dataclass
class IterationState:
    iteration: int
    combination: Combination
    n_v: int
    omega: tuple
    im_residual: float
    g0: float
    spectrum_gap: float
    side_ratio: tuple               # largest side line / r per action, first-order spectrum
    red: tuple = ()                 # first-order spectra (normalized, torus phases)
    green: tuple = ()               # re-minimized action spectra
    theta: object = None
    w_tables: tuple = ()
    grid_states: np.ndarray | None = None
    used: Combination | None = None  # combination the first-order step was built on
    status: str = RUNNING
    message: str = ""

    def summary(self):
        return {"iteration": self.iteration, "n_v": self.n_v, "omega1": self.omega[0],
                "omega2": self.omega[1], "g0": self.g0, "im_residual": self.im_residual,
                "spectrum_gap": self.spectrum_gap, "side_ratio_1": self.side_ratio[0],
                "side_ratio_2": self.side_ratio[1], "status": self.status}


@dataclass
class SolveResult:
    final: IterationState
    history: list
    state0: np.ndarray
    pair: ChainPair = field(repr=False, default=None)

    @property
    def status(self):
        return self.final.status

    @property
    def converged(self):
        return self.final.status == CONVERGED


def _side_ratio(spec, mains=((1, 0), (0, 1))):
    out = []
    for t, (n, m) in zip(spec, mains):
        out.append(float(np.abs(t.without(n, m).coeffs).max() / max(abs(t[n, m]), 1e-300)))
    return tuple(out)


def _match_window(t: FourierTable, W: int) -> FourierTable:
    if t.window == W:
        return t
    out = FourierTable.zeros(W)
    k = min(W, t.window)
    out.coeffs[W - k:W + k + 1, W - k:W + k + 1] = t.coeffs[t.window - k:t.window + k + 1,
                                                            t.window - k:t.window + k + 1]
    return out


def spectrum_gap(red, green):
    """Largest line-by-line difference of two pairs of spectra, each scaled so
    its main line is 1."""
    gap = 0.0
    for r, g, (n, m) in zip(red, green, ((1, 0), (0, 1))):
        W = max(r.window, g.window)
        r, g = _match_window(r, W), _match_window(g, W)
        d = r.coeffs / r[n, m] - g.coeffs / g[n, m]
        gap = max(gap, float(np.abs(d).max()))
    return gap


def iterate_once(model: ModelSpec, pair: ChainPair, comb: Combination, state0, config: SolveConfig,
                 n_v_next: int, order: str = "row"):
    """One pass: zeroth-order torus, phi and theta tables, first-order torus,
    new chain tables and the re-minimized combination."""
    N, W = config.grid, config.effective_window
    mu = model.mu_x
    grid0 = sample_torus(comb, N, N, seed_state=state0, order=order)
    phi = phi_fields(comb, model, grid0, mu=mu, window=W)
    om1, om2, imr = update_frequencies(phi, mu)
    comb_w = replace(comb, omega=(om1, om2))
    theta = theta_tables(phi, comb_w, floor=config.divisor_floor)
    red = first_order_actions(theta, comb_w, phased=False)
    grid1 = invert_on_grid(comb_w, first_order_targets(theta, comb_w), N, N, state0, order=order)
    w1 = chain_values(pair.rows(4), comb.layout, grid1.states)
    w_tables = tuple(fourier2d(w1[..., j], W) for j in range(4))
    a_new, report = minimize_fluctuation(w_tables, n_v_next)
    red_norm = normalized_spectrum(red, comb_w)
    gap = spectrum_gap(red, report.tables)
    new = Combination(a_new, pair.rows(n_v_next), comb.layout, omega=(om1, om2)).with_rotation(state0)
    st = IterationState(0, new, n_v_next, (om1, om2), imr, report.g0, gap, _side_ratio(red_norm),
                        red=red_norm, green=report.tables, theta=theta, w_tables=w_tables,
                        grid_states=grid1.states, used=comb_w)
    return st, comb_w


def solve(model: ModelSpec, state0, config: SolveConfig | None = None, pair: ChainPair | None = None,
          initial: Combination | None = None, order: str = "row") -> SolveResult:
    """Iterate from the bootstrap (or ``initial``) combination until the
    fluctuation, the imaginary frequency residual and the red/green spectra
    settle; failures are reported through the status, never raised."""
    config = config or SolveConfig()
    state0 = np.asarray(state0, dtype=float)
    if pair is None:
        pair = jordan_chains(build_square_matrix(model, config.n_s))
    history: list[IterationState] = []
    try:
        comb = initial if initial is not None else initial_combination(pair, state0).combination
    except BootstrapError as exc:
        st = IterationState(0, None, 2, (np.nan, np.nan), np.nan, np.nan, np.nan, (np.nan, np.nan),
                            status=OBSTRUCTED, message=str(exc))
        return SolveResult(st, [st], state0, pair)
    if initial is not None:
        comb = comb.with_rotation(state0)
    schedule = list(config.n_v_schedule)
    stage = max(0, schedule.index(comb.n_v)) if comb.n_v in schedule else 0
    increases = 0
    for it in range(1, config.max_iter + 1):
        n_v_next = schedule[stage]
        try:
            st, used = iterate_once(model, pair, comb, state0, config, n_v_next, order=order)
        except (InversionError, DivisionBlowupError, ResonanceObstructionError,
                RankDeficiencyError, ValueError) as exc:
            last = history[-1] if history else None
            st = IterationState(it, comb, comb.n_v, last.omega if last else comb.omega,
                                last.im_residual if last else np.nan, last.g0 if last else np.nan,
                                np.nan, last.side_ratio if last else (np.nan, np.nan),
                                status=OBSTRUCTED, message=f"{type(exc).__name__}: {exc}")
            history.append(st)
            return SolveResult(st, history, state0, pair)
        st.iteration = it
        prev = history[-1] if history else None
        history.append(st)
        log.info("iteration %d: omega=(%.5f, %.5f) g0=%.3e im=%.2e gap=%.2e side=(%.3f, %.3f)",
                 it, *st.omega, st.g0, st.im_residual, st.spectrum_gap, *st.side_ratio)
        dominant = max(st.side_ratio) * config.dominance_ratio <= 1.0
        if prev is not None and prev.n_v == st.n_v:
            rel = abs(st.g0 - prev.g0) / max(prev.g0, 1e-300)
            # a rising g0 while the red/green gap still contracts is a transient
            if st.g0 > prev.g0 and not st.spectrum_gap < 0.5 * prev.spectrum_gap:
                increases += 1
            else:
                increases = 0
            last_stage = stage == len(schedule) - 1
            if (last_stage and (rel < config.tol_g or st.g0 < 1e-20) and st.im_residual < config.tol_im
                    and st.spectrum_gap < config.tol_spectrum):
                st.status = CONVERGED
                return SolveResult(st, history, state0, pair)
            if increases >= config.divergence_run:
                st.status = DIVERGED
                st.message = f"g0 increased {increases} times in a row"
                return SolveResult(st, history, state0, pair)
        if dominant and stage < len(schedule) - 1:
            stage += 1
            increases = 0
            # re-minimize the current tables with the larger set of chain rows
            a_new, report = minimize_fluctuation(st.w_tables, schedule[stage])
            st.combination = Combination(a_new, pair.rows(schedule[stage]), comb.layout,
                                         omega=st.omega).with_rotation(state0)
            st.n_v = schedule[stage]
            st.g0 = report.g0
            st.green = report.tables
        comb = st.combination
    history[-1].status = DIVERGED
    history[-1].message = f"not converged after {config.max_iter} iterations"
    return SolveResult(history[-1], history, state0, pair)


def continue_amplitude(prev: SolveResult, new_state0, model: ModelSpec,
                       config: SolveConfig | None = None) -> SolveResult:
    """Solve at ``new_state0`` starting from the combination (and frequencies)
    of an earlier converged solve."""
    if prev.final.status != CONVERGED:
        raise ValueError("continuation needs a converged solution")
    return solve(model, new_state0, config, pair=prev.pair, initial=prev.final.combination)


# ---------------------------------------------------------------------------
# boundary scan

@dataclass
class ProbeOutcome:
    y0: float
    py0: float
    status: str
    residual: float
    iterations: int
    omega: tuple
    message: str = ""
    seeded_from: float | None = None


@dataclass
class BoundaryScan:
    energy: float
    outcomes: list

    def rows(self):
        for o in self.outcomes:
            yield (o.y0, o.py0, o.status, o.residual, o.iterations, o.omega[0], o.omega[1], o.message)

    def last_converged(self):
        ok = [o for o in self.outcomes if o.status == CONVERGED]
        return ok[-1] if ok else None


def scan_boundary(model: ModelSpec, E: float, probes, config: SolveConfig | None = None,
                  x0: float = 0.0, continuation: bool = True) -> BoundaryScan:
    """Solve along ``probes`` = [(y0, p_y0), ...] in the given order, seeding
    each solve from the last converged one when ``continuation`` is set.  The
    residual column is the largest side line of v2 relative to its main line."""
    config = config or SolveConfig()
    pair = jordan_chains(build_square_matrix(model, config.n_s))
    outcomes, seed = [], None
    for y0, py0 in probes:
        try:
            s0 = initial_state(E, x0, y0, py0, model)
        except InfeasibleEnergyError as exc:
            outcomes.append(ProbeOutcome(y0, py0, OBSTRUCTED, np.nan, 0, (np.nan, np.nan), str(exc)))
            continue
        res = None
        if continuation and seed is not None:
            res = solve(model, s0, config, pair=pair, initial=seed.final.combination)
            if res.status != CONVERGED:
                log.info("seeded solve at (%g, %g) ended %s; retrying from the bootstrap", y0, py0, res.status)
        if res is None or res.status != CONVERGED:
            alt = solve(model, s0, config, pair=pair)
            res = alt if (res is None or alt.status == CONVERGED) else res
        fin = res.final
        outcomes.append(ProbeOutcome(y0, py0, fin.status, fin.side_ratio[1], fin.iteration,
                                     fin.omega, fin.message,
                                     seeded_from=seed.state0[3] if seed is not None else None))
        if res.status == CONVERGED:
            seed = res
    return BoundaryScan(E, outcomes)
