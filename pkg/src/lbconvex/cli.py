"""Command line: python -m lbconvex <subcommand> [--config FILE] [--out-dir DIR] [--seed N] [--jobs N].

Exit status: 0 when no check failed (inconclusive and advisory checks never
fail a run), 1 when a check failed, 2 for a bad config or command line,
3 when the iteration diverged (residuals.csv still holds the history).
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .boundary_flux import DivergenceError
from .config import ENV_PREFIX, ConfigError, RunConfig
from .report import write_check_csv

COMMANDS = ("solve", "verify-geometry", "verify-collision", "verify-flux-forms", "probe-regularity", "all")
EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3

EPILOG = f"""\
config files are sectioned key = value (see configs/); every key has a default.
environment variables {ENV_PREFIX}<SECTION>_<KEY> override the file, e.g.
{ENV_PREFIX}GRID_ZETA_MAX=8; command-line flags override both.
exit status: 0 ok, 1 a check failed, 2 bad config or usage, 3 divergence.
"""


# -- artifacts --------------------------------------------------------------------------
def _g(v):
    return f"{float(v):.12g}"


def write_wallflux(path, psi):
    nodes = psi.mesh.nodes
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node_id", "x", "y", "z", "psi"])
        for i, (p, v) in enumerate(zip(nodes, psi.values)):
            w.writerow([i, _g(p[0]), _g(p[1]), _g(p[2]), _g(v)])


def write_field(path, field_):
    nx, nv = field_.values.shape
    X = field_.volume.nodes
    data = np.column_stack(
        [np.repeat(np.arange(nx), nv), np.repeat(X, nv, axis=0), np.tile(np.arange(nv), nx), field_.values.ravel()]
    )
    np.savetxt(path, data, fmt=["%d", "%.12g", "%.12g", "%.12g", "%d", "%.12g"], delimiter=",",
               header="node_id,x,y,z,zeta_index,value", comments="")


def write_residuals(path, updates, steps):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iter", "update_norm", "equation_residual"])
        for i, r in enumerate(updates):
            s = steps[i] if i < len(steps) else r
            w.writerow([i + 1, _g(s), _g(r)])


def write_collision_csv(path, rows):
    from .suites import COLLISION_COLUMNS

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLLISION_COLUMNS)
        w.writerows(r.row() for r in rows)


def write_report_csv(path, report):
    from .regularity import REPORT_COLUMNS

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        w.writerows(report.rows())


def _dump_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


# -- verdicts -----------------------------------------------------------------------------
def _verdict(check, suite, status, advisory=False):
    return {"check": check, "suite": suite, "status": status, "advisory": bool(advisory)}


def _table_verdicts(tables, suite):
    """One verdict per check name; repeated names are merged (fail wins)."""
    merged = {}
    for t in tables:
        status = "pass" if t.ok else "fail"
        prev = merged.get(t.name)
        if prev is None:
            merged[t.name] = _verdict(t.name, suite, status, t.advisory)
        elif status == "fail" and not t.advisory:
            prev["status"] = "fail"
    return list(merged.values())


# -- sections -------------------------------------------------------------------------------
def _section(verdicts=(), timings=None, artifacts=(), convergence=None, diverged=False, error=None):
    return {
        "verdicts": list(verdicts),
        "timings": dict(timings or {}),
        "artifacts": list(artifacts),
        "convergence": convergence,
        "diverged": diverged,
        "error": error,
    }


def run_geometry(cfg, out):
    from .suites import geometry_suite

    t0 = time.perf_counter()
    tables = geometry_suite(cfg)
    write_check_csv(out / "geometry_checks.csv", tables)
    return _section(_table_verdicts(tables, "geometry"), {"geometry": time.perf_counter() - t0}, ["geometry_checks.csv"])


def run_collision(cfg, out):
    from .suites import collision_suite, collision_verdicts

    t0 = time.perf_counter()
    rows = collision_suite(cfg)
    write_collision_csv(out / "collision_checks.csv", rows)
    verdicts = [_verdict(k, "collision", "pass" if ok else "fail") for k, ok in collision_verdicts(rows).items()]
    return _section(verdicts, {"collision": time.perf_counter() - t0}, ["collision_checks.csv"])


def run_flux_forms(cfg, out):
    from .suites import flux_forms_suite

    t0 = time.perf_counter()
    tables = flux_forms_suite(cfg)
    write_check_csv(out / "flux_form_checks.csv", tables)
    return _section(_table_verdicts(tables, "flux_forms"), {"flux_forms": time.perf_counter() - t0}, ["flux_form_checks.csv"])


def _solve_into(cfg, out, decomposition=True):
    """(outcome, section); on divergence outcome is None and residuals.csv holds the history."""
    from .suites import solve

    try:
        outcome = solve(cfg, decomposition=decomposition)
    except DivergenceError as e:
        write_residuals(out / "residuals.csv", e.history, e.steps)
        conv = {"converged": False, "iterations": len(e.history), "message": str(e)}
        return None, _section([_verdict("picard_converged", "solve", "fail")], {}, ["residuals.csv"], conv, True, str(e))
    res = outcome.result
    write_wallflux(out / "wallflux.csv", res.psi)
    write_field(out / "field.csv", res.field)
    write_residuals(out / "residuals.csv", res.updates, res.steps)
    write_check_csv(out / "solve_checks.csv", outcome.checks)
    timings = {f"solve.{k}": v for k, v in outcome.timings.items()}
    arts = ["wallflux.csv", "field.csv", "residuals.csv", "solve_checks.csv"]
    return outcome, _section(_table_verdicts(outcome.checks, "solve"), timings, arts, outcome.convergence)


def run_solve(cfg, out):
    return _solve_into(cfg, out)[1]


def run_probes(cfg, out, decomposition=False):
    from .suites import regularity_suite

    outcome, sec = _solve_into(cfg, out, decomposition)
    if outcome is None:
        return sec
    t0 = time.perf_counter()
    reports = regularity_suite(cfg, outcome)
    for r in reports:
        name = f"probe_{r.check_name}.csv"
        write_report_csv(out / name, r)
        sec["artifacts"].append(name)
    _dump_json(out / "probe_verdicts.json", [r.verdict() for r in reports])
    sec["artifacts"].append("probe_verdicts.json")
    sec["verdicts"] += [_verdict(r.check_name, "regularity", r.status, r.advisory) for r in reports]
    sec["timings"]["regularity"] = time.perf_counter() - t0
    return sec


RUNNERS = {
    "verify-geometry": run_geometry,
    "verify-collision": run_collision,
    "verify-flux-forms": run_flux_forms,
    "solve": run_solve,
    "probe-regularity": run_probes,
}
ALL_ORDER = ("verify-geometry", "verify-collision", "verify-flux-forms", "probe-regularity")


def _run_named(name, cfg, out):
    if name == "probe-regularity":
        return run_probes(cfg, out, decomposition=True)
    return RUNNERS[name](cfg, out)


def run_all(cfg, out):
    """Every suite; with jobs > 1 the suites run in worker processes.  The
    solve happens once, inside the regularity run, with the decomposition check."""
    if cfg.run.jobs > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.run.jobs, len(ALL_ORDER))) as pool:
            futures = [pool.submit(_run_named, name, cfg, out) for name in ALL_ORDER]
            sections = [f.result() for f in futures]
    else:
        sections = [_run_named(name, cfg, out) for name in ALL_ORDER]
    merged = _section()
    for s in sections:
        merged["verdicts"] += s["verdicts"]
        merged["timings"].update(s["timings"])
        merged["artifacts"] += s["artifacts"]
        if s["convergence"] is not None:
            merged["convergence"] = s["convergence"]
        merged["diverged"] = merged["diverged"] or s["diverged"]
        merged["error"] = merged["error"] or s["error"]
    return merged


# -- entry point -----------------------------------------------------------------------------
def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file (defaults are used without one)")
    common.add_argument("--out-dir", help="directory for CSV and JSON artifacts (overrides [run] out_dir)")
    common.add_argument("--seed", type=int, help="random seed (overrides [run] seed)")
    common.add_argument("--jobs", type=int, help="worker processes for `all` (overrides [run] jobs)")
    parser = argparse.ArgumentParser(
        prog="python -m lbconvex",
        description="Linearized Boltzmann solver and verification suites on convex domains.",
        epilog=EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"lbconvex {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(COMMANDS) + "}", required=True)
    helps = {
        "solve": "Picard solve; writes wallflux.csv, field.csv, residuals.csv",
        "verify-geometry": "geometry inequalities on the configured domain",
        "verify-collision": "collision operator identities and bounds",
        "verify-flux-forms": "velocity, surface and volume forms of the wall-flux operators",
        "probe-regularity": "solve, then derivative and modulus probes",
        "all": "every suite above",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name], epilog=EPILOG,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    return parser


def load_config(args, environ=None):
    cfg = RunConfig.load(args.config, environ) if args.config else RunConfig.from_ini("", "<defaults>", environ)
    run = {}
    if args.out_dir is not None:
        run["out_dir"] = args.out_dir
    if args.seed is not None:
        run["seed"] = args.seed
    if args.jobs is not None:
        run["jobs"] = args.jobs
    return cfg.with_updates(run=run) if run else cfg


def main(argv=None, environ=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args, environ)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"error: cannot read config: {e}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(cfg.run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    section = run_all(cfg, out) if args.command == "all" else RUNNERS[args.command](cfg, out)
    failed = [v["check"] for v in section["verdicts"] if v["status"] == "fail" and not v["advisory"]]
    if section["diverged"]:
        code, status = EXIT_DIVERGED, "diverged"
    elif failed:
        code, status = EXIT_FAILED, "failed"
    else:
        code, status = EXIT_OK, "ok"
    timings = {k: round(v, 3) for k, v in section["timings"].items()}
    timings["wall"] = round(time.perf_counter() - t0, 3)
    summary = {
        "command": args.command,
        "status": status,
        "exit_code": code,
        "failed_checks": failed,
        "config": cfg.to_dict(),
        "timings": timings,
        "convergence": section["convergence"],
        "verdicts": section["verdicts"],
        "artifacts": section["artifacts"] + ["summary.json"],
    }
    _dump_json(out / "summary.json", summary)
    for v in section["verdicts"]:
        tag = v["status"].upper() + (" (advisory)" if v["advisory"] else "")
        print(f"{tag:<22} {v['suite']:<11} {v['check']}")
    if section["error"]:
        print(f"error: {section['error']}", file=sys.stderr)
    print(f"{status}: {len(section['verdicts'])} checks, {len(failed)} failed; artifacts in {out}")
    return code
