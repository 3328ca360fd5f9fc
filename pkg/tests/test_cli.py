import csv
import json
import subprocess
import sys

import pytest

from ruin2d import cli

MODEL = {"c1": 2, "c2": 2, "sigma1": 1, "sigma2": 1, "lambda1": 0.3, "lambda2": 0.3, "lambda3": 0.2,
         "claim1": {"kind": "exponential", "param": 1.0}, "claim2": {"kind": "exponential", "param": 1.0}}
GRID = {"tau": 0, "T": 1, "n_t": 9, "n_x": 17, "xi_max": 3}


def _run(tmp_path, experiment, cfg, *extra, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    out = tmp_path / f"out-{experiment}"
    code = cli.main([experiment, "--config", str(path), "--out", str(out), *extra])
    return code, out


def _rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_simulate_writes_mc_rows_and_event_log(tmp_path):
    cfg = {"model": MODEL, "mc": {"n_paths": 2000, "dt_max": 0.02, "seed": 3, "horizon": 1, "event_log_paths": 4},
           "probes": [[0, 1, 1], [0.5, 0.5, 2]]}
    code, out = _run(tmp_path, "simulate", cfg)
    assert code == 0
    rows = _rows(out / "mc.csv")
    assert rows[0] == ["x1", "x2", "start", "horizon", "n_paths", "seed", "p_hat", "std_err"]
    assert len(rows) == 3 and rows[2][:6] == ["0.5", "2.0", "0.5", "1.0", "2000", "3"]
    assert _rows(out / "events.csv")[0] == ["path", "event_time", "stream", "dz1", "dz2", "r1", "r2"]
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "ok" and manifest["seed"] == 3
    assert set(manifest["versions"]) == {"ruin2d", "python", "numpy", "scipy", "numba"}
    assert manifest["config_hash"] == cli.config_hash(manifest["config"])
    assert manifest["artifacts"]["mc.csv"]["rows"] == 2


def test_simulate_ultimate_mode(tmp_path):
    model = dict(MODEL, lambda1=0, lambda2=0, lambda3=0, c1=1, c2=1)
    cfg = {"model": model, "mc": {"n_paths": 2000, "dt_max": 0.5, "seed": 3, "t_cut": 50, "x0": [1, 2]}}
    code, out = _run(tmp_path, "simulate", cfg)
    assert code == 0
    rows = _rows(out / "mc.csv")
    assert [r[3] for r in rows[1:]] == ["50.0", "100.0"]


def test_missing_seed_is_a_config_fault(tmp_path, capsys):
    cfg = {"model": MODEL, "mc": {"n_paths": 10, "dt_max": 0.1, "horizon": 1}, "probes": [[0, 1, 1]]}
    code, out = _run(tmp_path, "simulate", cfg)
    assert code == cli.EXIT_CONFIG
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "config" and "seed" in err["message"]
    assert json.loads((out / "manifest.json").read_text())["status"] == "config-error"


@pytest.mark.parametrize("cfg", [
    {"experiment": "solve", "model": MODEL, "grid": GRID},
    {"model": dict(MODEL, sigma2=0), "grid": GRID},
    {"model": MODEL},
    {"model": MODEL, "grid": dict(GRID, n_t=1)},
    {"model": MODEL, "grid": GRID, "probes": [[0, 1]]},
])
def test_config_faults(tmp_path, cfg):
    code, _ = _run(tmp_path, "generator-check", cfg)
    assert code == cli.EXIT_CONFIG


def test_unreadable_config(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["solve", "--config", str(bad), "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG
    assert json.loads((tmp_path / "o" / "error.json").read_text())["exit_code"] == 2
    assert cli.main(["solve", "--config", str(tmp_path / "missing.json")]) == cli.EXIT_CONFIG


def test_solve_outputs_field_and_sidecar(tmp_path):
    code, out = _run(tmp_path, "solve", {"model": MODEL, "grid": GRID}, "--probe", "0,1,1", "--probe", "0.5,2,0.5")
    assert code == 0
    rows = _rows(out / "field.csv")
    assert rows[0] == ["t", "x1", "x2", "phi"] and len(rows) == 1 + 9 * 17 * 17
    side = json.loads((out / "field.json").read_text())
    assert side["converged"] and side["grid"]["n_t"] == 9
    probes = _rows(out / "probes.csv")
    assert len(probes) == 3 and 0 < float(probes[1][3]) < 1


def test_non_convergence_exit_code(tmp_path):
    code, out = _run(tmp_path, "solve", {"model": MODEL, "grid": GRID}, "--kmax", "1", "--tol", "1e-300")
    assert code == cli.EXIT_NUMERIC
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "numeric-failure"
    assert all(a["partial"] for a in manifest["artifacts"].values())
    assert manifest["config"]["solver"] == {"k_max": 1, "tol": 1e-300}


def test_kernel_check_default(tmp_path):
    code, out = _run(tmp_path, "kernel-check", {"model": MODEL})
    assert code == 0
    rows = _rows(out / "kernel_check.csv")
    assert rows[0] == ["check_name", "t", "x1", "x2", "tau", "xi1", "xi2", "value", "bound", "pass"]
    residual = [r for r in rows[1:] if r[0] == "adjoint_residual"]
    assert len(residual) == 100 and all(r[-1] == "True" for r in rows[1:])


def test_kernel_check_seed_override(tmp_path):
    _, a = _run(tmp_path, "kernel-check", {"model": MODEL, "kernel_check": {"n_points": 5}}, "--seed", "1")
    assert json.loads((a / "manifest.json").read_text())["config"]["kernel_check"]["seed"] == 1


def test_generator_check_rows(tmp_path):
    code, out = _run(tmp_path, "generator-check", {"model": MODEL, "grid": GRID})
    assert code == 0
    rows = _rows(out / "residuals.csv")
    assert rows[0] == ["t", "x1", "x2", "residual", "h1", "h2", "dt"] and len(rows) == 10


def test_compare_without_claims_passes(tmp_path):
    model = dict(MODEL, lambda1=0, lambda2=0, lambda3=0, c1=1, c2=1)
    cfg = {"model": model, "grid": dict(GRID, n_t=17, n_x=33),
           "mc": {"n_paths": 5000, "dt_max": 0.01, "seed": 1}}
    code, out = _run(tmp_path, "compare", cfg)
    assert code == 0
    rows = _rows(out / "compare.csv")
    assert rows[0] == ["probe", "phi_solver", "phi_mc", "std_err", "abs_diff", "pass"]
    assert len(rows) == 10 and all(r[-1] == "True" for r in rows[1:])


def test_rerun_reproduces_artifacts_byte_for_byte(tmp_path):
    cfg = {"model": MODEL, "grid": GRID, "mc": {"n_paths": 3000, "dt_max": 0.02, "seed": 9}}
    _, a = _run(tmp_path, "compare", cfg, name="a.json")
    (tmp_path / "first").mkdir()
    for f in ("compare.csv", "mc.csv", "field.csv", "field.json"):
        (tmp_path / "first" / f).write_bytes((a / f).read_bytes())
    _, b = _run(tmp_path, "compare", cfg, "--workers", "3", name="a.json")
    for f in ("compare.csv", "mc.csv", "field.csv", "field.json"):
        assert (tmp_path / "first" / f).read_bytes() == (b / f).read_bytes()


def test_internal_error_exit_code(tmp_path, monkeypatch):
    def boom(*args):
        raise RuntimeError("unexpected")

    monkeypatch.setitem(cli.RUNNERS, "solve", boom)
    code, out = _run(tmp_path, "solve", {"model": MODEL, "grid": GRID})
    assert code == cli.EXIT_INTERNAL
    assert "RuntimeError" in json.loads((out / "error.json").read_text())["message"]


def test_module_entry_point(tmp_path):
    path = tmp_path / "k.json"
    path.write_text(json.dumps({"model": MODEL, "kernel_check": {"n_points": 3}}))
    proc = subprocess.run([sys.executable, "-m", "ruin2d", "kernel-check", "--config", str(path),
                           "--out", str(tmp_path / "m")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "m" / "kernel_check.csv").exists()
