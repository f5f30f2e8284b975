"""Command-line front end.

Every command writes one result document (JSON by default) that echoes the
full effective configuration, so a run can be reproduced from its output.

Exit codes: 0 success, 2 usage, 3 bad data, 4 numerical or solver failure,
5 unreadable input or unwritable output.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import naive_bootstrap, ols_total_effect
from .data import load_csv, load_csv_files, prepare
from .errors import DataError, NumericalError
from .inference import InferenceConfig, fit_complete, fit_incomplete
from .kernels import BACKEND
from .l1_solver import default_tau
from .simulation import parse_scenario_file, run_experiment

SCHEMA_VERSION = 1
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4, 5


def resource_path(name):
    """Path of a bundled example file (``toy.csv``, ``example1_complete.cfg``)."""
    return Path(str(resources.files("hdmed") / "resources" / name))


# --------------------------------------------------------------------------
# argument parsing


def _level(text):
    v = float(text)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError("level must lie in (0, 1)")
    return v


def _nonneg(text):
    v = float(text)
    if not v >= 0:
        raise argparse.ArgumentTypeError("must be non-negative")
    return v


def _posint(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _names(text):
    return [t.strip() for t in text.split(",") if t.strip()]


def _add_data_args(p):
    g = p.add_argument_group("input (one CSV, or one CSV per block)")
    g.add_argument("--data", help="CSV holding every column; unnamed columns are mediators")
    g.add_argument("--outcome", help="outcome column name (with --data)")
    g.add_argument("--exposures", type=_names, help="comma-separated exposure columns")
    g.add_argument("--covariates", type=_names, default=[], help="comma-separated covariate columns")
    g.add_argument("--outcome-file")
    g.add_argument("--mediators-file")
    g.add_argument("--exposures-file")
    g.add_argument("--covariates-file")


def _add_output_args(p):
    p.add_argument("--output", "-o", default="-", help="output path ('-' for stdout)")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--threads", type=_posint, default=None,
                   help="worker threads (default: $HDMED_THREADS or 1)")


def _add_fit_args(p):
    p.add_argument("--tau", type=_nonneg, default=None,
                   help="debiasing constraint level (default sqrt(log p / n) / 3)")
    p.add_argument("--lambda-scheme", choices=("quantile", "universal"), default="quantile")
    p.add_argument("--level", type=_level, default=0.95, help="confidence level")
    p.add_argument("--solver", choices=("auto", "homotopy", "admm", "highs"), default="auto")
    p.add_argument("--on-infeasible", choices=("error", "relax"), default="error")
    p.add_argument("--seed", type=int, default=0, help="echoed for reproducibility")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="hdmed",
        description="Debiased inference for indirect effects with many mediators.",
    )
    parser.add_argument("--version", action="version", version=f"hdmed {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, helptext in (("fit-incomplete", "indirect and direct effects"),
                           ("fit-complete", "indirect effect assuming no direct effect")):
        p = sub.add_parser(name, help=helptext)
        _add_data_args(p)
        _add_fit_args(p)
        if name == "fit-incomplete":
            p.add_argument("--unpenalized-direct", action="store_true",
                           help="leave exposure coefficients unpenalized in the pilot fit")
        _add_output_args(p)

    p = sub.add_parser("baseline-ols", help="OLS total effect of the exposures")
    _add_data_args(p)
    p.add_argument("--level", type=_level, default=0.95)
    p.add_argument("--seed", type=int, default=0)
    _add_output_args(p)

    p = sub.add_parser("baseline-naive", help="lasso product estimate with bootstrap interval")
    _add_data_args(p)
    p.add_argument("--level", type=_level, default=0.95)
    p.add_argument("--bootstrap-B", type=_posint, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=("complete", "incomplete"), default="complete")
    _add_output_args(p)

    p = sub.add_parser("simulate", help="Monte-Carlo study from a scenario file")
    p.add_argument("--scenario", required=True, help="key = value scenario file")
    p.add_argument("--n-reps", type=_posint, default=None)
    p.add_argument("--seed", type=int, default=None, help="run seed (overrides run_seed)")
    p.add_argument("--methods", type=_names, default=None)
    p.add_argument("--level", type=_level, default=None)
    p.add_argument("--include-records", action="store_true",
                   help="add per-replication results to JSON output")
    _add_output_args(p)
    return parser


# --------------------------------------------------------------------------
# helpers


def _threads(args):
    if args.threads is not None:
        return args.threads
    env = os.environ.get("HDMED_THREADS", "").strip()
    if env:
        try:
            v = int(env)
        except ValueError:
            raise DataError(f"HDMED_THREADS must be an integer, got {env!r}") from None
        if v < 1:
            raise DataError("HDMED_THREADS must be positive")
        return v
    return 1


def _load(args):
    files = (args.outcome_file, args.mediators_file, args.exposures_file)
    if args.data:
        if any(files) or args.covariates_file:
            raise _UsageError("use either --data or the separate --*-file options")
        if not args.outcome or not args.exposures:
            raise _UsageError("--data needs --outcome and --exposures")
        return load_csv(args.data, args.outcome, args.exposures, args.covariates)
    if not all(files):
        raise _UsageError("give --data, or all of --outcome-file, --mediators-file, --exposures-file")
    return load_csv_files(args.outcome_file, args.mediators_file, args.exposures_file,
                          args.covariates_file)


class _UsageError(Exception):
    pass


def _inputs(args):
    if args.data:
        return {"data": args.data, "outcome": args.outcome, "exposures": args.exposures,
                "covariates": args.covariates}
    return {"outcome_file": args.outcome_file, "mediators_file": args.mediators_file,
            "exposures_file": args.exposures_file, "covariates_file": args.covariates_file}


def _data_summary(data):
    return {"n": data.n, "p": data.p, "q": data.q,
            "r": 0 if data.Z is None else data.Z.shape[1],
            "names": data.names}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _dump_json(doc):
    return json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n"


def _rows_to_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for r in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in r])
    return buf.getvalue()


def write_output(text, path):
    """Write ``text`` to ``path`` atomically ('-' means stdout)."""
    if path in (None, "-"):
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    path = Path(path)
    directory = path.parent if str(path.parent) else Path(".")
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=directory)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def _estimate_rows(est):
    rows = [("quantity", "component", "estimate", "se", "z", "p_value", "ci_lower", "ci_upper")]
    q = est.b_hat.size
    for j in range(est.estimate.size):
        name = "indirect" if j < q else "direct"
        rows.append((name, j % q, float(est.estimate[j]), float(est.se[j]), float(est.wald_z[j]),
                     float(est.p_values[j]), float(est.ci[j, 0]), float(est.ci[j, 1])))
    return rows


def _baseline_rows(est):
    rows = [("quantity", "component", "estimate", "se", "p_value", "ci_lower", "ci_upper")]
    se = est.se
    for j in range(est.point.size):
        rows.append(("total" if est.method == "ols" else "indirect", j, float(est.point[j]),
                     float(se[j]) if se is not None else "", float(est.p_value[j]),
                     float(est.ci[j, 0]), float(est.ci[j, 1])))
    return rows


# --------------------------------------------------------------------------
# commands


def _cmd_fit(args):
    data = _load(args)
    threads = _threads(args)
    cfg = InferenceConfig(
        tau=args.tau,
        lambda_scheme=args.lambda_scheme,
        level=args.level,
        penalize_direct=not getattr(args, "unpenalized_direct", False),
        solver=args.solver,
        n_jobs=threads,
        on_infeasible=args.on_infeasible,
    )
    fit = fit_incomplete if args.command == "fit-incomplete" else fit_complete
    est = fit(data, cfg)
    if args.format == "csv":
        return _rows_to_csv(_estimate_rows(est))
    config = {
        "tau": est.tau,
        "tau_rule": "default sqrt(log(p)/n)/3" if args.tau is None else "user",
        "lambda_scheme": args.lambda_scheme,
        "lambda0": est.lambda0,
        "level": args.level,
        "penalize_direct": cfg.penalize_direct,
        "solver": args.solver,
        "on_infeasible": args.on_infeasible,
        "seed": args.seed,
        "threads": threads,
    }
    return _dump_json({
        "schema_version": SCHEMA_VERSION,
        "command": args.command,
        "inputs": _inputs(args),
        "config": config,
        "data": _data_summary(data),
        "result": est.to_dict(),
        "warnings": est.warnings,
        "kernel_backend": BACKEND,
    })


def _cmd_ols(args):
    data = _load(args)
    est = ols_total_effect(data, args.level)
    if args.format == "csv":
        return _rows_to_csv(_baseline_rows(est))
    return _dump_json({
        "schema_version": SCHEMA_VERSION,
        "command": args.command,
        "inputs": _inputs(args),
        "config": {"level": args.level, "seed": args.seed, "threads": _threads(args)},
        "data": _data_summary(data),
        "result": est.to_dict(),
        "warnings": est.warnings,
    })


def _cmd_naive(args):
    data = _load(args)
    threads = _threads(args)
    est = naive_bootstrap(data, B=args.bootstrap_B, level=args.level, seed=args.seed,
                          mode=args.mode, n_jobs=threads)
    if args.format == "csv":
        return _rows_to_csv(_baseline_rows(est))
    return _dump_json({
        "schema_version": SCHEMA_VERSION,
        "command": args.command,
        "inputs": _inputs(args),
        "config": {"level": args.level, "bootstrap_B": args.bootstrap_B, "seed": args.seed,
                   "mode": args.mode, "lambda_rule": "universal", "lam": est.lam,
                   "bootstrap": "pairs", "threads": threads},
        "data": _data_summary(data),
        "result": est.to_dict(),
        "warnings": est.warnings,
    })


def _cmd_simulate(args):
    scenarios, run = parse_scenario_file(args.scenario)
    methods = args.methods or run.get("methods", ["proposed_complete", "ols"])
    n_reps = args.n_reps or run.get("n_reps", 200)
    seed = args.seed if args.seed is not None else run.get("run_seed", 0)
    level = args.level or run.get("level", 0.95)
    options = {k: run[k] for k in ("naive_B", "lambda_scheme", "on_infeasible") if k in run}
    report = run_experiment(scenarios, methods=methods, n_reps=n_reps, level=level,
                            seed=seed, n_jobs=_threads(args), options=options)
    if args.format == "csv":
        return report.to_csv()
    doc = json.loads(report.to_json(include_records=args.include_records))
    doc["command"] = args.command
    doc["inputs"] = {"scenario": args.scenario}
    return _dump_json(doc)


COMMANDS = {
    "fit-incomplete": _cmd_fit,
    "fit-complete": _cmd_fit,
    "baseline-ols": _cmd_ols,
    "baseline-naive": _cmd_naive,
    "simulate": _cmd_simulate,
}


def _fail(category, exc, code):
    print(f"hdmed: {category} error: {exc}", file=sys.stderr)
    return code


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        text = COMMANDS[args.command](args)
        write_output(text, args.output)
    except _UsageError as exc:
        parser.print_usage(sys.stderr)
        return _fail("usage", exc, EXIT_USAGE)
    except DataError as exc:
        return _fail("data", exc, EXIT_DATA)
    except NumericalError as exc:
        return _fail("numerical", exc, EXIT_NUMERIC)
    except OSError as exc:
        return _fail("I/O", exc, EXIT_IO)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
