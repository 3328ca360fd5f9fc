"""Command-line front end: ``ruin2d <experiment> --config run.json``.

The configuration is a JSON document::

    {
      "model":  {"c1": 2, "c2": 2, "sigma1": 1, "sigma2": 1,
                 "lambda1": 0.3, "lambda2": 0.3, "lambda3": 0.2,
                 "claim1": {"kind": "exponential", "param": 1.0},
                 "claim2": {"kind": "exponential", "param": 1.0}},
      "grid":   {"tau": 0, "T": 1, "n_t": 33, "n_x": 65, "xi_max": 3},
      "mc":     {"n_paths": 100000, "dt_max": 0.01, "seed": 7, "horizon": 1},
      "solver": {"tol": 1e-6, "k_max": 50},
      "kernel_check": {"n_points": 100, "seed": 0},
      "probes": [[0, 1, 1], [0.5, 1.5, 0.75]],
      "output": "out"
    }

Every run writes its CSV tables plus ``manifest.json`` into the output
directory.  Exit codes: 0 success, 2 configuration fault, 3 numerical
failure (non-convergence or a failed check), 4 internal error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import platform
import sys
import time
from pathlib import Path

import numba
import numpy as np
import scipy

from . import __version__
from .errors import ConfigError, InvalidParameters, PreconditionError
from .generator import pide_residual
from .kernel import kernel_check
from .model import ModelParams, validate
from .rng import PathStream
from .simulate import estimate_survival, estimate_ultimate_survival, sample_path
from .solver import DEFAULT_KMAX, DEFAULT_TOL, SolverGrid, default_probes, picard_solve, query

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_INTERNAL = 4

EXPERIMENTS = ("simulate", "solve", "kernel-check", "generator-check", "compare")
COMPARE_ABS_TOL = 0.02


class NumericFailure(Exception):
    """The experiment ran but its numerical outcome is not acceptable."""


def _write_csv(path: Path, header, rows) -> int:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        n = 0
        for row in rows:
            w.writerow(row)
            n += 1
    return n


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(_canonical(cfg).encode()).hexdigest()[:16]


def _parse_probe(text: str):
    try:
        t, a, b = (float(v) for v in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"probe {text!r} must be 't,x1,x2'") from exc
    return [t, a, b]


def load_config(args) -> dict:
    """Read the config file and fold the command-line overrides into it."""
    try:
        with open(args.config) as fh:
            cfg = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {args.config}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    declared = cfg.get("experiment")
    if declared is not None and declared != args.experiment:
        raise ConfigError(f"config selects experiment {declared!r} but {args.experiment!r} was requested")
    cfg["experiment"] = args.experiment
    if args.out is not None:
        cfg["output"] = args.out
    if args.seed is not None:
        if args.experiment == "kernel-check":
            cfg.setdefault("kernel_check", {})["seed"] = args.seed
        else:
            cfg.setdefault("mc", {})["seed"] = args.seed
    if args.probe:
        cfg["probes"] = [_parse_probe(p) for p in args.probe]
    if args.tol is not None:
        cfg.setdefault("solver", {})["tol"] = args.tol
    if args.kmax is not None:
        cfg.setdefault("solver", {})["k_max"] = args.kmax
    if args.workers is not None:
        cfg.setdefault("mc", {})["n_workers"] = args.workers
    return cfg


def _model(cfg) -> ModelParams:
    if "model" not in cfg:
        raise ConfigError("config needs a 'model' section")
    try:
        params = ModelParams.from_dict(cfg["model"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad model section: {exc!r}") from exc
    report = validate(params)
    if not report.ok:
        raise ConfigError("invalid model: " + "; ".join(report.violations))
    return params


def _grid(cfg, params) -> SolverGrid:
    if "grid" not in cfg:
        raise ConfigError("config needs a 'grid' section")
    try:
        grid = SolverGrid.from_dict(cfg["grid"], params)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad grid section: {exc!r}") from exc
    bad = grid.problems()
    if bad:
        raise ConfigError("invalid grid: " + "; ".join(bad))
    return grid


def _mc(cfg) -> dict:
    mc = cfg.get("mc")
    if not isinstance(mc, dict):
        raise ConfigError("config needs an 'mc' section")
    if "seed" not in mc:
        raise ConfigError("mc.seed is required; runs are never seeded from the clock")
    seed = mc["seed"]
    if not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ConfigError("mc.seed must be an unsigned 64-bit integer")
    for key in ("n_paths", "dt_max"):
        if key not in mc:
            raise ConfigError(f"mc.{key} is required")
    if int(mc["n_paths"]) < 1 or float(mc["dt_max"]) <= 0:
        raise ConfigError("mc.n_paths must be >= 1 and mc.dt_max > 0")
    return mc


def _probes(cfg, grid: SolverGrid | None = None):
    probes = cfg.get("probes")
    if probes is None:
        if grid is None:
            raise ConfigError("config needs 'probes' as a list of [t, x1, x2]")
        return [tuple(p) for p in default_probes(grid)]
    try:
        out = [tuple(float(v) for v in p) for p in probes]
    except (TypeError, ValueError) as exc:
        raise ConfigError("probes must be a list of [t, x1, x2]") from exc
    if not out or any(len(p) != 3 for p in out):
        raise ConfigError("probes must be a non-empty list of [t, x1, x2]")
    return out


def _solve(cfg, params, grid, out: Path, artifacts: dict, info: dict):
    sol = cfg.get("solver", {})
    tol = float(sol.get("tol", DEFAULT_TOL))
    k_max = int(sol.get("k_max", DEFAULT_KMAX))
    t0 = time.perf_counter()
    fld, report = picard_solve(grid, params, tol, k_max)
    info["timings"]["solve_s"] = time.perf_counter() - t0
    info["convergence"] = report.to_dict()

    t, a, b = np.meshgrid(fld.t_nodes, fld.x1_nodes, fld.x2_nodes, indexing="ij")
    rows = zip(t.ravel().tolist(), a.ravel().tolist(), b.ravel().tolist(), fld.values.ravel().tolist())
    artifacts["field.csv"] = _write_csv(out / "field.csv", ("t", "x1", "x2", "phi"), rows)
    sidecar = {
        "grid": grid.to_dict(),
        "params_hash": params.params_hash(),
        "convergence": report.to_dict(),
        "converged": report.converged,
    }
    (out / "field.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    artifacts["field.json"] = 1
    return fld, report


def run_simulate(cfg, out, artifacts, info):
    params = _model(cfg)
    mc = _mc(cfg)
    if "probes" not in cfg and "x0" in mc:
        probes = [(float(mc.get("start", 0.0)), float(mc["x0"][0]), float(mc["x0"][1]))]
    else:
        probes = _probes(cfg, _grid(cfg, params) if "grid" in cfg else None)
    n, dt, seed = int(mc["n_paths"]), float(mc["dt_max"]), int(mc["seed"])
    workers = int(mc.get("n_workers", 1))
    rows = []
    t0 = time.perf_counter()
    if "t_cut" in mc:
        t_cut = float(mc["t_cut"])
        stable = []
        for _, x1, x2 in probes:
            res = estimate_ultimate_survival(params, (x1, x2), t_cut, n, dt, seed, True, workers)
            rows += [res.estimate.csv_row(), res.doubled.csv_row()]
            stable.append(bool(res.stable))
        info["doubling_stable"] = stable
    else:
        if "horizon" not in mc:
            raise ConfigError("mc.horizon (or mc.t_cut for ultimate survival) is required")
        horizon = float(mc["horizon"])
        for t, x1, x2 in probes:
            rows.append(estimate_survival(params, (x1, x2), t, horizon, n, dt, seed, workers).csv_row())
    info["timings"]["simulate_s"] = time.perf_counter() - t0
    header = ("x1", "x2", "start", "horizon", "n_paths", "seed", "p_hat", "std_err")
    artifacts["mc.csv"] = _write_csv(out / "mc.csv", header, rows)

    n_log = int(mc.get("event_log_paths", 0))
    if n_log > 0:
        t, x1, x2 = probes[0]
        horizon = float(mc.get("horizon", mc.get("t_cut", 0.0)))
        events = []
        for i in range(n_log):
            outcome = sample_path(params, (x1, x2), t, horizon, dt, PathStream(seed, i), record_events=True)
            events.extend(outcome.events)
        header = ("path", "event_time", "stream", "dz1", "dz2", "r1", "r2")
        artifacts["events.csv"] = _write_csv(out / "events.csv", header, events)


def run_solve(cfg, out, artifacts, info):
    params = _model(cfg)
    grid = _grid(cfg, params)
    probes = _probes(cfg, grid)
    fld, report = _solve(cfg, params, grid, out, artifacts, info)
    rows = [(t, x1, x2, query(fld, t, (x1, x2))) for t, x1, x2 in probes]
    artifacts["probes.csv"] = _write_csv(out / "probes.csv", ("t", "x1", "x2", "phi"), rows)
    if not report.converged:
        raise NumericFailure(f"Picard iteration did not converge in {report.iterations} sweeps")


def run_kernel_check(cfg, out, artifacts, info):
    params = _model(cfg)
    kc = cfg.get("kernel_check", {})
    rows = kernel_check(params, int(kc.get("n_points", 100)), int(kc.get("seed", 0)),
                        float(kc.get("h", 1e-3)), float(kc.get("tol", 1e-4)))
    header = ("check_name", "t", "x1", "x2", "tau", "xi1", "xi2", "value", "bound", "pass")
    artifacts["kernel_check.csv"] = _write_csv(out / "kernel_check.csv", header, rows)
    failed = sum(1 for r in rows if not r[-1])
    info["failed_checks"] = failed
    if failed:
        raise NumericFailure(f"{failed} kernel checks failed")


def _snap(nodes, v, lo_margin=2):
    i = int(np.argmin(np.abs(nodes - v)))
    return int(min(max(i, lo_margin), len(nodes) - 1 - lo_margin))


def run_generator_check(cfg, out, artifacts, info):
    params = _model(cfg)
    grid = _grid(cfg, params)
    probes = _probes(cfg, grid)
    fld, report = _solve(cfg, params, grid, out, artifacts, info)
    quad = grid.quad_nodes
    rows = []
    for t, x1, x2 in probes:
        it = _snap(fld.t_nodes, t)
        i1 = _snap(fld.x1_nodes, x1)
        i2 = _snap(fld.x2_nodes, x2)
        pt = (float(fld.t_nodes[it]), float(fld.x1_nodes[i1]), float(fld.x2_nodes[i2]))
        r = pide_residual(fld, params, pt, quad)
        rows.append((*pt, r, fld.x1_nodes[i1 + 1] - fld.x1_nodes[i1], fld.x2_nodes[i2 + 1] - fld.x2_nodes[i2],
                     fld.t_nodes[it + 1] - fld.t_nodes[it]))
    header = ("t", "x1", "x2", "residual", "h1", "h2", "dt")
    artifacts["residuals.csv"] = _write_csv(out / "residuals.csv", header, rows)
    if not report.converged:
        raise NumericFailure(f"Picard iteration did not converge in {report.iterations} sweeps")


def run_compare(cfg, out, artifacts, info):
    params = _model(cfg)
    grid = _grid(cfg, params)
    mc = _mc(cfg)
    probes = _probes(cfg, grid)
    fld, report = _solve(cfg, params, grid, out, artifacts, info)
    n, dt, seed = int(mc["n_paths"]), float(mc["dt_max"]), int(mc["seed"])
    workers = int(mc.get("n_workers", 1))
    rows, mc_rows = [], []
    t0 = time.perf_counter()
    for t, x1, x2 in probes:
        phi = query(fld, t, (x1, x2))
        est = estimate_survival(params, (x1, x2), t, grid.T, n, dt, seed, workers)
        mc_rows.append(est.csv_row())
        diff = abs(phi - est.p_hat)
        ok = diff <= max(3.0 * est.std_err, COMPARE_ABS_TOL)
        rows.append((f"{t},{x1},{x2}", phi, est.p_hat, est.std_err, diff, ok))
    info["timings"]["simulate_s"] = time.perf_counter() - t0
    header = ("x1", "x2", "start", "horizon", "n_paths", "seed", "p_hat", "std_err")
    artifacts["mc.csv"] = _write_csv(out / "mc.csv", header, mc_rows)
    header = ("probe", "phi_solver", "phi_mc", "std_err", "abs_diff", "pass")
    artifacts["compare.csv"] = _write_csv(out / "compare.csv", header, rows)
    failed = sum(1 for r in rows if not r[-1])
    info["failed_probes"] = failed
    if not report.converged:
        raise NumericFailure(f"Picard iteration did not converge in {report.iterations} sweeps")
    if failed:
        raise NumericFailure(f"{failed} probes disagree with Monte Carlo")


RUNNERS = {
    "simulate": run_simulate,
    "solve": run_solve,
    "kernel-check": run_kernel_check,
    "generator-check": run_generator_check,
    "compare": run_compare,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ruin2d", description="Two-line minimum ruin experiments.")
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", help="output directory (overrides config 'output')")
        p.add_argument("--seed", type=int, help="unsigned 64-bit seed override")
        p.add_argument("--probe", action="append", help="probe point 't,x1,x2' (repeatable)")
        p.add_argument("--tol", type=float, help="Picard sup-norm tolerance")
        p.add_argument("--kmax", type=int, help="maximum Picard sweeps")
        p.add_argument("--workers", type=int, help="Monte Carlo worker threads")
    return parser


def _versions() -> dict:
    return {
        "ruin2d": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
    }


def _report_error(out: Path | None, kind: str, message: str, code: int):
    payload = {"error": kind, "message": message, "exit_code": code}
    print(json.dumps(payload), file=sys.stderr)
    if out is not None:
        try:
            out.mkdir(parents=True, exist_ok=True)
            (out / "error.json").write_text(json.dumps(payload, indent=2) + "\n")
        except OSError:
            pass


def run(args) -> int:
    """Execute one experiment and return its exit code."""
    out = Path(args.out) if args.out else None
    try:
        cfg = load_config(args)
        out = Path(cfg.get("output", "ruin2d-out"))
        out.mkdir(parents=True, exist_ok=True)
    except ConfigError as exc:
        _report_error(out, "config", str(exc), EXIT_CONFIG)
        return EXIT_CONFIG

    info = {"timings": {}}
    artifacts: dict[str, int] = {}
    status, code, message = "ok", EXIT_OK, None
    t0 = time.perf_counter()
    try:
        RUNNERS[args.experiment](cfg, out, artifacts, info)
    except (ConfigError, InvalidParameters, PreconditionError) as exc:
        status, code, message = "config-error", EXIT_CONFIG, str(exc)
    except NumericFailure as exc:
        status, code, message = "numeric-failure", EXIT_NUMERIC, str(exc)
    except Exception as exc:  # noqa: BLE001 - reported through the exit code
        status, code, message = "internal-error", EXIT_INTERNAL, f"{type(exc).__name__}: {exc}"
    info["timings"]["total_s"] = time.perf_counter() - t0

    manifest = {
        "experiment": args.experiment,
        "status": status,
        "exit_code": code,
        "message": message,
        "config": cfg,
        "config_hash": config_hash(cfg),
        "seed": cfg.get("mc", {}).get("seed"),
        "versions": _versions(),
        "artifacts": {name: {"rows": n, "partial": code != EXIT_OK} for name, n in sorted(artifacts.items())},
        **info,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    if code != EXIT_OK:
        kind = {EXIT_CONFIG: "config", EXIT_NUMERIC: "numeric", EXIT_INTERNAL: "internal"}[code]
        _report_error(out, kind, message, code)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return run(args)


if __name__ == "__main__":
    sys.exit(main())
