import json

import pytest

from sqkam.cli import (EXIT_CONFIG, EXIT_DIVERGED, EXIT_OBSTRUCTED, EXIT_OK, OUTPUT_ENV, RunConfig,
                       main)


def read_manifest(d):
    return json.loads((d / "manifest.json").read_text())


def test_matrix_command(tmp_path, capsys):
    assert main(["matrix", "--n-s", "3", "--out", str(tmp_path)]) == EXIT_OK
    assert "dimension 34" in capsys.readouterr().out
    man = read_manifest(tmp_path)
    assert man["summary"]["dimension"] == 34
    assert man["format_version"] == 1
    first = (tmp_path / "matrix.csv").read_text().splitlines()[0]
    assert first == f"# format_version=1 config_hash={man['config_hash']}"


def test_matrix_n_s5_chain_length(tmp_path):
    assert main(["matrix", "--out", str(tmp_path)]) == EXIT_OK
    s = read_manifest(tmp_path)["summary"]
    assert s["dimension"] == 125 and max(s["chain_lengths"]) == 3


@pytest.mark.parametrize("argv, field", [
    (["matrix", "--n-s", "0"], "n_s"),
    (["solve", "--n-v", "2,3"], "n_v"),
    (["solve", "--tol-g", "-1"], "tol_g"),
    (["scan", "--probes", "0,nan"], "probes[0]"),
])
def test_invalid_config_reports_field(tmp_path, capsys, argv, field):
    assert main(argv + ["--out", str(tmp_path)]) == EXIT_CONFIG
    assert f"{field}:" in capsys.readouterr().err


def test_usage_error_and_unknown_command():
    assert main(["frobnicate"]) == EXIT_CONFIG
    assert main(["solve", "--grid", "many"]) == EXIT_CONFIG


def test_config_file_and_unknown_key(tmp_path, capsys):
    good = tmp_path / "run.toml"
    good.write_text('n_s = 3\nout = "%s"\n' % (tmp_path / "o").as_posix())
    assert main(["matrix", "--config", str(good)]) == EXIT_OK
    assert read_manifest(tmp_path / "o")["summary"]["dimension"] == 34
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"n_s": 3, "colour": "red"}))
    assert main(["matrix", "--config", str(bad)]) == EXIT_CONFIG
    assert "colour: unknown field" in capsys.readouterr().err


def test_flags_override_file(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"n_s": 5}))
    assert main(["matrix", "--config", str(cfg), "--n-s", "3", "--out", str(tmp_path)]) == EXIT_OK
    assert read_manifest(tmp_path)["summary"]["dimension"] == 34


def test_env_overrides_output_dir(tmp_path, monkeypatch):
    target = tmp_path / "env-out"
    monkeypatch.setenv(OUTPUT_ENV, str(target))
    assert main(["matrix", "--n-s", "2", "--out", str(tmp_path / "flag-out")]) == EXIT_OK
    assert (target / "manifest.json").exists()
    assert not (tmp_path / "flag-out").exists()


def test_infeasible_initial_condition(tmp_path, capsys):
    assert main(["solve", "--py0", "0.9", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "p_x0" in capsys.readouterr().err


def test_digest_ignores_output_dir():
    a, b = RunConfig(out="x"), RunConfig(out="y")
    assert a.digest() == b.digest()
    assert RunConfig(n_s=3).digest() != a.digest()


def test_short_solve_is_deterministic(tmp_path):
    outs = []
    for k in range(2):
        d = tmp_path / f"run{k}"
        code = main(["solve", "--grid", "32", "--max-iter", "2", "--out", str(d)])
        assert code == EXIT_DIVERGED
        outs.append(d)
    for name in ("solve_report.json", "spectrum_iter01.csv", "w_tables.csv", "theta_tables.csv"):
        assert (outs[0] / name).read_text() == (outs[1] / name).read_text()


def test_obstructed_probe_exit_code(tmp_path, capsys):
    code = main(["solve", "--py0", "0.12", "--out", str(tmp_path)])
    assert code == EXIT_OBSTRUCTED
    assert "diagnostic" in capsys.readouterr().err
    assert read_manifest(tmp_path)["summary"]["status"] == "obstructed"


@pytest.fixture(scope="module")
def solved(tmp_path_factory):
    d = tmp_path_factory.mktemp("solve")
    code = main(["solve", "--out", str(d)])
    return code, d


def test_reference_solve_outputs(solved):
    code, d = solved
    assert code == EXIT_OK
    man = read_manifest(d)
    assert man["summary"]["status"] == "converged"
    assert 0.03 <= man["summary"]["side_ratio"][1] <= 0.05
    for name in ("solve_report.json", "theta_tables.csv", "w_tables.csv", "combination.json",
                 "spectrum_iter01.csv"):
        assert (d / name).exists()
    report = json.loads((d / "solve_report.json").read_text())
    assert report[-1]["status"] == "converged"
    assert len(report[0]["first_order_top"]) == 20


def test_seeded_solve(solved, tmp_path):
    _, d = solved
    out = tmp_path / "seeded"
    code = main(["solve", "--py0", "0.17", "--seed", str(d / "combination.json"), "--out", str(out)])
    assert code == EXIT_OK
    assert read_manifest(out)["summary"]["iterations"] <= 6
    assert main(["solve", "--n-s", "3", "--seed", str(d / "combination.json"), "--out", str(out)]) == EXIT_CONFIG


def test_poincare_empty_probes(tmp_path):
    assert main(["poincare", "--out", str(tmp_path)]) == EXIT_OK
    lines = (tmp_path / "poincare.csv").read_text().splitlines()
    assert lines[1] == "tag,probe_y0,probe_py0,y,py" and len(lines) == 2


def test_poincare_and_scan_single_probe(tmp_path):
    p = tmp_path / "p"
    assert main(["poincare", "--probes", "0,0.18", "--t-end", "300", "--out", str(p)]) == EXIT_OK
    rows = (p / "poincare.csv").read_text().splitlines()[2:]
    tags = {r.split(",")[0] for r in rows}
    assert tags == {"oracle", "first-order", "kam-invariant"}
    assert read_manifest(p)["summary"]["inside_energy_limit"]
    s = tmp_path / "s"
    assert main(["scan", "--probes", "0,0.18", "--t-end", "300", "--out", str(s)]) == EXIT_OK
    rows = (s / "boundary_map.csv").read_text().splitlines()
    assert len(rows) == 3 and ",converged," in rows[2]
    assert read_manifest(s)["summary"]["last_converged_py0"] == 0.18
