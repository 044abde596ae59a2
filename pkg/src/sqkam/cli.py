"""Command line front end: ``sqkam matrix|solve|poincare|scan``.

Every command writes CSV files plus ``manifest.json`` (format version, config
hash, summary numbers) into the output directory (``--out``, overridden by the
``SQKAM_OUTPUT_DIR`` environment variable).
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .dynamics import (energy_limit_curve, frequency_drift, inside_energy_limit, integrate,
                       poincare_section)
from .iteration import (CONVERGED, DIVERGED, OBSTRUCTED, SolveConfig, SolveResult, scan_boundary,
                        solve)
from .kaminvariant import KamInvariant, kam_values
from .model import InfeasibleEnergyError, ModelError, initial_state, load_model
from .sqmatrix import build_square_matrix, jordan_chains, write_matrix_report
from .torusmap import Combination, action_values, chain_values

log = logging.getLogger("sqkam")

FORMAT_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_OBSTRUCTED = 0, 2, 3, 4
OUTPUT_ENV = "SQKAM_OUTPUT_DIR"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    model: str = "henon-heiles"
    energy: float = 1.0 / 12.0
    x0: float = 0.0
    y0: float = 0.0
    py0: float = 0.18
    probes: list = field(default_factory=list)      # [[y0, py0], ...]
    n_s: int = 5
    n_v: list = field(default_factory=lambda: [2, 4])
    grid: int = 64
    window: int = 40
    max_iter: int = 12
    tol_g: float = 1e-3
    tol_im: float = 1e-4
    tol_spectrum: float = 1e-2
    t_end: float = 2000.0
    dt: float = 0.1
    out: str = "sqkam-out"
    seed: str | None = None
    overlay: list = field(default_factory=list)     # external contour CSV files (y, py)
    continuation: bool = True

    def solve_config(self) -> SolveConfig:
        return SolveConfig(n_s=self.n_s, n_v_schedule=tuple(self.n_v), grid=self.grid,
                           window=self.window, max_iter=self.max_iter, tol_g=self.tol_g,
                           tol_im=self.tol_im, tol_spectrum=self.tol_spectrum)

    def digest(self) -> str:
        d = asdict(self)
        d.pop("out")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def validate(cfg: RunConfig) -> RunConfig:
    def bad(path, msg):
        raise ConfigError(f"{path}: {msg}")

    if cfg.n_s < 1:
        bad("n_s", "must be >= 1")
    if cfg.n_s > 9:
        bad("n_s", "must be <= 9")
    if not cfg.n_v or any(v not in (2, 4) for v in cfg.n_v):
        bad("n_v", "entries must be 2 or 4")
    if cfg.grid < 8:
        bad("grid", "must be >= 8")
    if cfg.window < 1:
        bad("window", "must be >= 1")
    if cfg.max_iter < 1:
        bad("max_iter", "must be >= 1")
    for name in ("tol_g", "tol_im", "tol_spectrum", "t_end", "dt"):
        if not getattr(cfg, name) > 0:
            bad(name, "must be positive")
    if not np.isfinite(cfg.energy):
        bad("energy", "must be finite")
    for k, p in enumerate(cfg.probes):
        if len(p) != 2 or not all(np.isfinite(float(v)) for v in p):
            bad(f"probes[{k}]", "must be a pair [y0, py0]")
    return cfg


def _read_file(path: Path) -> dict:
    text = path.read_text()
    if path.suffix.lower() == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:  # python < 3.11
            import tomli as tomllib  # type: ignore[no-redef]
        return tomllib.loads(text)
    return json.loads(text)


def build_config(args) -> RunConfig:
    cfg = RunConfig()
    known = {f.name: f for f in fields(RunConfig)}
    if getattr(args, "config", None):
        data = _read_file(Path(args.config))
        for k, v in data.items():
            if k not in known:
                raise ConfigError(f"{k}: unknown field")
            setattr(cfg, k, v)
    for k in known:
        v = getattr(args, k, None)
        if v is not None:
            setattr(cfg, k, v)
    try:
        cfg.n_s, cfg.grid, cfg.window, cfg.max_iter = map(int, (cfg.n_s, cfg.grid, cfg.window, cfg.max_iter))
        cfg.n_v = [int(v) for v in cfg.n_v]
        cfg.probes = [[float(a), float(b)] for a, b in cfg.probes]
        for k in ("energy", "x0", "y0", "py0", "tol_g", "tol_im", "tol_spectrum", "t_end", "dt"):
            setattr(cfg, k, float(getattr(cfg, k)))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"malformed value: {exc}") from exc
    env = os.environ.get(OUTPUT_ENV)
    if env:
        cfg.out = env
    return validate(cfg)


# ---------------------------------------------------------------------------
# output helpers

def _out_dir(cfg: RunConfig) -> Path:
    p = Path(cfg.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _preamble(cfg: RunConfig) -> str:
    return f"format_version={FORMAT_VERSION} config_hash={cfg.digest()}"


def _write_csv(path, header, rows, cfg: RunConfig):
    with open(path, "w", newline="") as fh:
        fh.write(f"# {_preamble(cfg)}\n")
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def _manifest(out: Path, cfg: RunConfig, command: str, summary: dict, files):
    data = {"format_version": FORMAT_VERSION, "tool_version": __version__, "command": command,
            "config_hash": cfg.digest(), "config": asdict(cfg), "summary": summary,
            "files": sorted(str(f) for f in files)}
    (out / "manifest.json").write_text(json.dumps(data, indent=2, sort_keys=True, default=_json_default))
    return data


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, complex):
        return [o.real, o.imag]
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def _spectrum_rows(tables, omega, top=10):
    for l, t in enumerate(tables, start=1):
        for n, m, c in t.top_lines(top):
            yield [l, n, m, n * omega[0] + m * omega[1], abs(c), c.real, c.imag]


def save_combination(path, comb: Combination, n_s: int):
    d = {"n_s": n_s, "n_v": comb.n_v, "a_re": comb.a.real.tolist(), "a_im": comb.a.imag.tolist(),
         "r": list(comb.r), "omega": list(comb.omega), "theta0": list(comb.theta0)}
    Path(path).write_text(json.dumps(d, indent=2))


def load_combination(path, pair, n_s: int) -> Combination:
    d = json.loads(Path(path).read_text())
    if int(d["n_s"]) != n_s:
        raise ConfigError(f"seed: solution was computed at n_s={d['n_s']}, config has n_s={n_s}")
    a = np.array(d["a_re"]) + 1j * np.array(d["a_im"])
    return Combination(a, pair.rows(a.shape[1]), pair.chain_x.layout, r=tuple(d["r"]),
                       omega=tuple(d["omega"]), theta0=tuple(d["theta0"]))


def _status_code(status):
    return {CONVERGED: EXIT_OK, DIVERGED: EXIT_DIVERGED, OBSTRUCTED: EXIT_OBSTRUCTED}.get(status, EXIT_DIVERGED)


# ---------------------------------------------------------------------------
# commands

def cmd_matrix(cfg: RunConfig) -> int:
    model = load_model(cfg.model)
    M = build_square_matrix(model, cfg.n_s)
    out = _out_dir(cfg)
    pair = jordan_chains(M) if model.resonant else None
    if pair is None:
        from .sqmatrix import chains_off_resonance
        pair = chains_off_resonance(M)
    rep = write_matrix_report(M, pair, out, _preamble(cfg))
    print(f"dimension {rep['dimension']}  diagonal audit {rep['diagonal_audit']:.1e}  "
          f"chain lengths {rep['chain_lengths']}  residuals {max(rep['chain_residuals']):.1e}")
    _manifest(out, cfg, "matrix", rep, ["matrix.csv", "chains.csv"])
    return EXIT_OK


def run_solve(cfg: RunConfig, model=None) -> SolveResult:
    model = model or load_model(cfg.model)
    s0 = initial_state(cfg.energy, cfg.x0, cfg.y0, cfg.py0, model)
    sc = cfg.solve_config()
    pair = jordan_chains(build_square_matrix(model, cfg.n_s))
    initial = load_combination(cfg.seed, pair, cfg.n_s) if cfg.seed else None
    return solve(model, s0, sc, pair=pair, initial=initial)


def cmd_solve(cfg: RunConfig) -> int:
    model = load_model(cfg.model)
    res = run_solve(cfg, model)
    out = _out_dir(cfg)
    files = []
    report = []
    for st in res.history:
        row = st.summary()
        row["message"] = st.message
        if st.red:
            row["first_order_top"] = [[r[0], r[1], r[2], r[4]] for r in _spectrum_rows(st.red, st.omega)]
            row["minimized_top"] = [[r[0], r[1], r[2], r[4]] for r in _spectrum_rows(st.green, st.omega)]
            name = f"spectrum_iter{st.iteration:02d}.csv"
            rows = [["first_order"] + r for r in _spectrum_rows(st.red, st.omega, 40)]
            rows += [["minimized"] + r for r in _spectrum_rows(st.green, st.omega, 40)]
            _write_csv(out / name, ["kind", "action", "n", "m", "frequency", "abs", "re", "im"], rows, cfg)
            files.append(name)
        report.append(row)
    fin = res.final
    (out / "solve_report.json").write_text(json.dumps(report, indent=2, default=_json_default))
    files.append("solve_report.json")
    if fin.theta is not None:
        rows = []
        for l, t in enumerate(fin.theta.tables, start=1):
            for n, m, c in t.top_lines(200):
                rows.append([l, n, m, n * fin.omega[0] + m * fin.omega[1], c.real, c.imag, abs(c)])
        _write_csv(out / "theta_tables.csv", ["action", "n", "m", "frequency", "re", "im", "abs"], rows, cfg)
        w0 = chain_values(res.pair.rows(4), fin.used.layout, res.state0)
        rows = []
        names = ("w_x0", "w_y0", "w_x1", "w_y1")
        for j, t in enumerate(fin.w_tables):
            for n, m, c in t.top_lines(10):
                rows.append([names[j], n, m, n * fin.omega[0] + m * fin.omega[1], abs(c) / abs(w0[j])])
        _write_csv(out / "w_tables.csv", ["chain_row", "n", "m", "frequency", "abs_normalized"], rows, cfg)
        save_combination(out / "combination.json", fin.combination, cfg.n_s)
        files += ["theta_tables.csv", "w_tables.csv", "combination.json"]
    summary = {"status": fin.status, "iterations": fin.iteration, "omega": list(fin.omega),
               "side_ratio": list(fin.side_ratio), "g0": fin.g0, "im_residual": fin.im_residual,
               "message": fin.message}
    _manifest(out, cfg, "solve", summary, files)
    print(f"{fin.status} after {fin.iteration} iterations; omega = ({fin.omega[0]:.5f}, {fin.omega[1]:.5f}); "
          f"largest side line of v2 = {100 * fin.side_ratio[1]:.2f}%")
    if fin.status != CONVERGED:
        print(f"diagnostic: {fin.message}", file=sys.stderr)
    return _status_code(fin.status)


def level_contour(fun, level, center, E, model, n_rays=180):
    """Points (y, p_y) on x = 0 with fun(state) = level, found along rays from
    ``center`` inside the energy-allowed region."""
    from scipy.optimize import brentq

    pts = []
    cy, cpy = center
    for ang in np.linspace(0, 2 * np.pi, n_rays, endpoint=False):
        d = np.array([np.cos(ang), np.sin(ang)])

        def st(s):
            y, py = cy + s * d[0], cpy + s * d[1]
            return initial_state(E, 0.0, y, py, model)

        def g(s):
            with np.errstate(over="ignore", invalid="ignore"):
                return fun(st(s)) - level

        # march outward until the sign changes or the energy limit is hit
        s_lo = 1e-6
        try:
            g_lo = g(s_lo)
        except InfeasibleEnergyError:
            continue
        if not np.isfinite(g_lo):
            continue
        s = s_lo
        while s < 1.0:
            s_new = s + 0.005
            try:
                g_new = g(s_new)
            except InfeasibleEnergyError:
                break
            if not np.isfinite(g_new):
                break
            if np.sign(g_new) != np.sign(g_lo):
                r = brentq(g, s, s_new, xtol=1e-12)
                st_r = st(r)
                pts.append((st_r[2], st_r[3]))
                break
            s, g_lo = s_new, g_new
    return np.array(pts).reshape(-1, 2)


def cmd_poincare(cfg: RunConfig) -> int:
    model = load_model(cfg.model)
    out = _out_dir(cfg)
    probes = cfg.probes
    rows, files = [], ["poincare.csv", "energy_limit.csv"]
    status = CONVERGED
    y_lim, py_lim = energy_limit_curve(cfg.energy, model=model)
    _write_csv(out / "energy_limit.csv", ["y", "py"], zip(y_lim, py_lim), cfg)
    prev = None
    for y0, py0 in probes:
        s0 = initial_state(cfg.energy, cfg.x0, y0, py0, model)
        tr = integrate(model, s0, cfg.t_end, dt=cfg.dt)
        sec = poincare_section(model, tr)
        for a, b in zip(sec.y, sec.py):
            rows.append(["oracle", y0, py0, a, b])
        sc = cfg.solve_config()
        res = None
        if prev is not None and cfg.continuation:
            res = solve(model, s0, sc, pair=prev.pair, initial=prev.final.combination)
        if res is None or not res.converged:
            res = solve(model, s0, sc, pair=prev.pair if prev else None)
        if not res.converged:
            status = res.status
            log.warning("probe (%g, %g): %s", y0, py0, res.status)
            continue
        prev = res
        inv = KamInvariant.from_solve(res)
        center = (float(np.mean(sec.y)), float(np.mean(sec.py))) if len(sec) else (y0, py0)
        v_level = abs(action_values(inv.combination, s0)[1])
        k_level = abs(kam_values(inv, s0)[1])
        c1 = level_contour(lambda s: abs(action_values(inv.combination, s)[1]), v_level, center,
                           cfg.energy, model)
        c2 = level_contour(lambda s: abs(kam_values(inv, s)[1]), k_level, center, cfg.energy, model)
        rows += [["first-order", y0, py0, a, b] for a, b in c1]
        rows += [["kam-invariant", y0, py0, a, b] for a, b in c2]
    for path in cfg.overlay:
        for r in np.atleast_2d(np.loadtxt(path, delimiter=",", comments="#")):
            rows.append(["external", np.nan, np.nan, r[0], r[1]])
    _write_csv(out / "poincare.csv", ["tag", "probe_y0", "probe_py0", "y", "py"], rows, cfg)
    inside = all(inside_energy_limit(cfg.energy, r[3], r[4], tol=1e-9) for r in rows if r[0] != "external")
    _manifest(out, cfg, "poincare", {"points": len(rows), "inside_energy_limit": bool(inside),
                                     "status": status}, files)
    print(f"{len(rows)} section points for {len(probes)} probes")
    return _status_code(status) if status != CONVERGED else EXIT_OK


def cmd_scan(cfg: RunConfig) -> int:
    model = load_model(cfg.model)
    out = _out_dir(cfg)
    probes = cfg.probes or [[cfg.y0, cfg.py0]]
    scan = scan_boundary(model, cfg.energy, probes, cfg.solve_config(), x0=cfg.x0,
                         continuation=cfg.continuation)
    rows, onset = [], None
    for o in scan.outcomes:
        try:
            drift = frequency_drift(model, initial_state(cfg.energy, cfg.x0, o.y0, o.py0, model),
                                    t_end=cfg.t_end, dt=cfg.dt)
        except (InfeasibleEnergyError, RuntimeError):
            drift = np.nan
        irregular = bool(drift > 1e-4) if np.isfinite(drift) else True
        if irregular and onset is None:
            onset = o.py0
        rows.append([o.y0, o.py0, o.status, o.residual, o.iterations, o.omega[0], o.omega[1], drift,
                     int(irregular), o.message])
    _write_csv(out / "boundary_map.csv", ["y0", "py0", "status", "residual", "iterations", "omega1",
                                          "omega2", "frequency_drift", "irregular", "message"], rows, cfg)
    last = scan.last_converged()
    summary = {"probes": len(rows), "last_converged_py0": last.py0 if last else None,
               "last_converged_residual": last.residual if last else None,
               "chaos_onset_estimate": onset}
    _manifest(out, cfg, "scan", summary, ["boundary_map.csv"])
    for r in rows:
        print(f"p_y0={r[1]:.4f}  {r[2]:<10}  residual={r[3]:.3f}  iterations={r[4]}")
    return EXIT_OK


COMMANDS = {"matrix": cmd_matrix, "solve": cmd_solve, "poincare": cmd_poincare, "scan": cmd_scan}


def _pair_list(text):
    out = []
    for item in text.split(";"):
        item = item.strip()
        if item:
            a, b = item.split(",")
            out.append([float(a), float(b)])
    return out


def parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sqkam", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="JSON or TOML file with RunConfig fields")
        s.add_argument("--model", help="built-in model name or model file")
        s.add_argument("--energy", type=float)
        s.add_argument("--x0", type=float)
        s.add_argument("--y0", type=float)
        s.add_argument("--py0", type=float)
        s.add_argument("--probes", type=_pair_list, help='"y0,py0;y0,py0;..."')
        s.add_argument("--n-s", dest="n_s", type=int)
        s.add_argument("--n-v", dest="n_v", type=lambda t: [int(v) for v in t.split(",")],
                       help="n_v schedule, e.g. 2,4")
        s.add_argument("--grid", type=int)
        s.add_argument("--window", type=int)
        s.add_argument("--max-iter", dest="max_iter", type=int)
        s.add_argument("--tol-g", dest="tol_g", type=float)
        s.add_argument("--tol-im", dest="tol_im", type=float)
        s.add_argument("--tol-spectrum", dest="tol_spectrum", type=float)
        s.add_argument("--t-end", dest="t_end", type=float)
        s.add_argument("--dt", type=float)
        s.add_argument("--out", help=f"output directory (env {OUTPUT_ENV} overrides)")
        s.add_argument("--seed", help="combination.json of a converged solve to continue from")
        s.add_argument("--overlay", action="append", help="external contour CSV (y, py)")
        s.add_argument("--no-continuation", dest="continuation", action="store_const", const=False)
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    p = parser()
    try:
        args = p.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = build_config(args)
        return COMMANDS[args.command](cfg)
    except (ConfigError, ModelError, InfeasibleEnergyError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def main_exit():
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
