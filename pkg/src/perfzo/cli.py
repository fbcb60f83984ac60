"""Command-line entry point: ``perfzo <subcommand>``.

Exit codes: 0 success, 1 other package errors, 2 invalid configuration,
3 oracle failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .divergence import CalibrationStore
from .environments import ENVIRONMENTS, brute_force_opt, make_environment
from .errors import (
    CalibrationFailureError,
    ConfigError,
    InsufficientDataError,
    OracleFailureError,
    OracleUnsupportedError,
    PerfzoError,
)
from .harness import (
    DEFAULT_CALIBRATION,
    calibrate_family,
    diag_convexity,
    diag_expfam_condition,
    fit_slope,
    load_config,
    read_regret_csv,
    run_experiment,
)

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_ORACLE = 0, 1, 2, 3


def _params(pairs) -> dict:
    out = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigError(f"--param expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        out[key.strip()] = yaml.safe_load(value)
    return out


def _emit(payload, out=None) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.workers:
        cfg.workers = args.workers
    report = run_experiment(cfg, args.out)
    agg = report["aggregate"]
    print(
        f"{cfg.name}: {agg['n_seeds']} seeds, median slope {agg['median_slope']}, "
        f"success rate {agg['success_rate']:.2f}, loop N {agg['loop_n']}, total N {agg['total_n']}"
    )
    return EXIT_OK


def cmd_oracle(args) -> int:
    env = make_environment(args.env, **_params(args.param))
    report = brute_force_opt(env, args.resolution)
    _emit({"environment": env.describe(), "oracle": report.to_dict()}, args.out)
    return EXIT_OK


def cmd_calibrate(args) -> int:
    path = Path(args.store or os.environ.get("PERFZO_KL_CALIBRATION") or "kl_calibration.json")
    store = CalibrationStore.load(path) if path.exists() else CalibrationStore(path=path)
    grid = None
    if args.grid:
        grid = [float(g) for g in args.grid.split(",")]
    params = _params(args.param) if args.param else None
    cal = calibrate_family(args.family, args.eps, args.p, args.trials, args.seed, grid, store, params)
    store.save(path)
    run = cal.runs[-1]
    print(
        f"{args.family}: eps={args.eps} p={args.p} n_min={run['n_min']} c={run['c']:.6g} "
        f"-> stored c_cal={store.get(args.family).c_cal:.6g} in {path}"
    )
    return EXIT_OK


def cmd_diag_convexity(args) -> int:
    env = make_environment(args.env, **_params(args.param))
    rep = diag_convexity(env, args.axis, args.resolution, natural=args.natural)
    _emit({"environment": env.describe(), "report": rep.to_dict()}, args.out)
    return EXIT_OK


def cmd_diag_expfam(args) -> int:
    env = make_environment(args.env, **_params(args.param))
    lo, hi = float(env.theta_space.lower[0]), float(env.theta_space.upper[0])
    grid = np.linspace(lo, hi, args.points)
    rep = diag_expfam_condition(env, grid, args.draws, args.seed)
    _emit({"environment": env.describe(), "report": rep.to_dict()}, args.out)
    return EXIT_OK


def cmd_slope(args) -> int:
    data = read_regret_csv(args.csv)
    fit = fit_slope(data["k"], data["regret"], args.window)
    _emit({"csv": str(args.csv), "rows": int(len(data["k"])), **fit.__dict__})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="perfzo", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"perfzo {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment config")
    p.add_argument("config")
    p.add_argument("--out", help="output directory (default: config output_dir)")
    p.add_argument("--workers", type=int, help="parallel seeds (overrides config)")
    p.set_defaults(func=cmd_run)

    env_help = f"environment name: {', '.join(sorted(ENVIRONMENTS))}"
    param_help = "environment parameter override key=value (repeatable)"

    p = sub.add_parser("oracle", help="brute-force the performative optimum")
    p.add_argument("env", help=env_help)
    p.add_argument("--resolution", type=float, default=1e-5)
    p.add_argument("--param", action="append", help=param_help)
    p.add_argument("--out", help="write JSON here instead of stdout")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("calibrate", help="calibrate the KL estimator sample size")
    p.add_argument("family", choices=sorted(DEFAULT_CALIBRATION))
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--trials", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grid", help="comma-separated parameter grid (default: built-in)")
    p.add_argument("--param", action="append", help="family parameter key=value (repeatable)")
    p.add_argument("--store", help="calibration JSON to update (default: $PERFZO_KL_CALIBRATION or ./kl_calibration.json)")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("diag", help="diagnostics")
    dsub = p.add_subparsers(dest="diag", required=True)
    q = dsub.add_parser("convexity", help="second-difference convexity check")
    q.add_argument("env", help=env_help)
    q.add_argument("--axis", choices=("theta", "phi"), default="theta")
    q.add_argument("--resolution", type=float, default=0.01)
    q.add_argument("--natural", action="store_true", help="use the natural parameter on the phi axis")
    q.add_argument("--param", action="append", help=param_help)
    q.add_argument("--out")
    q.set_defaults(func=cmd_diag_convexity)
    q = dsub.add_parser("expfam", help="Poisson sufficient convexity condition")
    q.add_argument("env", help=env_help)
    q.add_argument("--points", type=int, default=11)
    q.add_argument("--draws", type=int, default=10**6)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--param", action="append", help=param_help)
    q.add_argument("--out")
    q.set_defaults(func=cmd_diag_expfam)

    p = sub.add_parser("slope", help="fit the log-log regret slope of a run CSV")
    p.add_argument("csv")
    p.add_argument("--window", type=float, default=0.8)
    p.set_defaults(func=cmd_slope)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OracleFailureError, OracleUnsupportedError) as exc:
        print(f"oracle error: {exc}", file=sys.stderr)
        return EXIT_ORACLE
    except (CalibrationFailureError, InsufficientDataError, PerfzoError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
