"""Experiment runner, regret-slope analysis and diagnostics.

An experiment is described by a YAML file::

    name: bernoulli_desk
    environment:
      name: bernoulli_square
      params: {sign: 1}
    optimizer:
      kind: two_level            # or: convex
      eps: 0.9
      p: 0.1
      eps_lm: 0.3
      p_lm: 0.1
      eps_kl: 0.04
      p_kl: 0.1
      overrides: {T: 200, S: 200, n_kl: 50}
    seeds: [0, 1]
    output_dir: runs/bernoulli
    analysis: {oracle_resolution: 1.0e-5, slope_window: 0.8, success_tol: 0.1, csv_stride: 1}
    workers: 1

A ``convex`` optimizer needs only ``T``.  A two-level optimizer may give
``budget`` and ``n_kl`` instead of tolerances, which selects the
budget-driven schedule.  ``PERF_SEED`` (comma-separated integers) replaces
the seed list.
"""

from __future__ import annotations

import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import yaml

from .core_math import SeededRng
from .divergence import (
    CalibrationStore,
    KLCalibration,
    calibrate_kl,
    default_store,
)
from .environments import (
    ENVIRONMENTS,
    Environment,
    OracleReport,
    brute_force_opt,
    make_environment,
    make_family,
)
from .errors import (
    CalibrationMissingError,
    ConfigError,
    InsufficientDataError,
    InvalidParameterError,
    UnsupportedError,
)
from .optimizers import (
    LEVELS,
    OptimizerConfig,
    RegretLedger,
    compute_regret,
    minimize_convex_pr,
    minimize_pr,
)

log = logging.getLogger(__name__)

__all__ = [
    "ExperimentConfig",
    "SlopeFit",
    "ConvexityReport",
    "ExpfamReport",
    "load_config",
    "build_optimizer_config",
    "run_experiment",
    "run_seed",
    "fit_slope",
    "diag_convexity",
    "diag_expfam_condition",
    "second_differences",
    "calibrate_family",
    "DEFAULT_CALIBRATION",
    "read_regret_csv",
]

THEORY_EXPONENT = 5.0 / 6.0
MIN_SLOPE_POINTS = 50
CONVEXITY_TOL = 1e-6


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    environment: str
    env_params: dict = field(default_factory=dict)
    optimizer: dict = field(default_factory=dict)
    seeds: list = field(default_factory=lambda: [0])
    output_dir: str = "runs"
    name: str = "experiment"
    oracle_resolution: float = 1e-5
    slope_window: float = 0.8
    success_tol: float = 0.1
    csv_stride: int = 1
    workers: int = 1

    def __post_init__(self):
        if self.environment not in ENVIRONMENTS:
            raise ConfigError(f"unknown environment {self.environment!r}; choose from {sorted(ENVIRONMENTS)}")
        kind = self.optimizer.get("kind", "two_level")
        if kind not in ("two_level", "convex"):
            raise ConfigError(f"optimizer.kind must be two_level or convex, got {kind!r}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        self.seeds = [int(s) for s in self.seeds]
        if any(s < 0 or s >= 2**64 for s in self.seeds):
            raise ConfigError("seeds must be 64-bit unsigned integers")
        self.oracle_resolution = float(self.oracle_resolution)
        self.slope_window = float(self.slope_window)
        self.success_tol = float(self.success_tol)
        self.csv_stride = int(self.csv_stride)
        self.workers = int(self.workers)
        if not 0 < self.slope_window <= 1:
            raise ConfigError("slope_window must lie in (0, 1]")
        if self.csv_stride < 1 or self.workers < 1:
            raise ConfigError("csv_stride and workers must be positive")

    @property
    def kind(self) -> str:
        return self.optimizer.get("kind", "two_level")

    @classmethod
    def from_mapping(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a mapping")
        env = data.get("environment")
        if isinstance(env, str):
            env = {"name": env}
        if not isinstance(env, dict) or "name" not in env:
            raise ConfigError("config needs environment.name")
        analysis = data.get("analysis", {}) or {}
        known = {"oracle_resolution", "slope_window", "success_tol", "csv_stride"}
        unknown = set(analysis) - known
        if unknown:
            raise ConfigError(f"unknown analysis keys {sorted(unknown)}")
        unknown_top = set(data) - {"name", "environment", "optimizer", "seeds", "output_dir", "analysis", "workers"}
        if unknown_top:
            raise ConfigError(f"unknown config keys {sorted(unknown_top)}")
        return cls(
            environment=env["name"],
            env_params=dict(env.get("params", {}) or {}),
            optimizer=dict(data.get("optimizer", {}) or {}),
            seeds=list(data.get("seeds", [0])),
            output_dir=str(data.get("output_dir", "runs")),
            name=str(data.get("name", "experiment")),
            workers=data.get("workers", 1),
            **analysis,
        )

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "environment": {"name": self.environment, "params": self.env_params},
            "optimizer": self.optimizer,
            "seeds": self.seeds,
            "output_dir": self.output_dir,
            "analysis": {
                "oracle_resolution": self.oracle_resolution,
                "slope_window": self.slope_window,
                "success_tol": self.success_tol,
                "csv_stride": self.csv_stride,
            },
            "workers": self.workers,
        }


def _seed_override(value: str) -> list[int]:
    try:
        return [int(s) for s in value.replace(" ", "").split(",") if s]
    except ValueError:
        raise ConfigError(f"PERF_SEED must be comma-separated integers, got {value!r}") from None


def load_config(path, environ=None) -> ExperimentConfig:
    """Read a YAML experiment file; ``PERF_SEED`` in ``environ`` replaces the seeds."""
    environ = os.environ if environ is None else environ
    try:
        data = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if environ.get("PERF_SEED"):
        data = dict(data or {})
        data["seeds"] = _seed_override(environ["PERF_SEED"])
    return ExperimentConfig.from_mapping(data)


def build_optimizer_config(cfg: ExperimentConfig, env: Environment) -> OptimizerConfig:
    """Validate the optimizer section against ``env`` without deploying anything."""
    opt = {k: v for k, v in cfg.optimizer.items() if k != "kind"}
    try:
        if "budget" in opt:
            if "n_kl" not in opt:
                raise ConfigError("the budget schedule needs both budget and n_kl")
            extra = {k: opt[k] for k in ("p", "p_lm", "p_kl") if k in opt}
            return OptimizerConfig.budget_schedule(
                int(opt["budget"]),
                int(opt["n_kl"]),
                d_theta=env.d_theta,
                d_phi=env.d_phi,
                family=env.family,
                overrides=dict(opt.get("overrides", {}) or {}),
                **extra,
            )
        required = ("eps", "p", "eps_lm", "p_lm", "eps_kl", "p_kl")
        missing = [k for k in required if k not in opt]
        if missing:
            raise ConfigError(f"optimizer section lacks {missing}")
        unknown = set(opt) - set(required) - {"overrides"}
        if unknown:
            raise ConfigError(f"unknown optimizer keys {sorted(unknown)}")
        return OptimizerConfig.for_environment(
            env,
            **{k: float(opt[k]) for k in required},
            overrides=dict(opt.get("overrides", {}) or {}),
        )
    except CalibrationMissingError as exc:
        raise ConfigError(f"{exc}; or set optimizer.overrides.n_kl") from None
    except (TypeError, InvalidParameterError) as exc:
        raise ConfigError(str(exc)) from None


def _convex_T(cfg: ExperimentConfig) -> int:
    try:
        T = int(cfg.optimizer["T"])
    except (KeyError, TypeError, ValueError):
        raise ConfigError("convex optimizer needs an integer T") from None
    if T < 1:
        raise ConfigError("T must be positive")
    return T


def _make_env(cfg: ExperimentConfig) -> Environment:
    return make_environment(cfg.environment, **cfg.env_params)


def validate(cfg: ExperimentConfig) -> dict:
    """Check the config end to end; returns the derived optimizer settings."""
    env = _make_env(cfg)
    if cfg.kind == "convex":
        T = _convex_T(cfg)
        if not math.sqrt(env.d_theta / T) < 1:
            raise ConfigError(f"T={T} is too small: need T > d_theta")
        return {"T": T, "loop_n": 2 * T}
    oc = build_optimizer_config(cfg, env)
    return {**oc.to_dict(), "loop_n": oc.loop_n}


# ---------------------------------------------------------------------------
# Slope fitting
# ---------------------------------------------------------------------------


@dataclass
class SlopeFit:
    slope: float
    intercept: float
    r_squared: float
    window: float
    n_points: int


def fit_slope(k, regret, window: float = 0.8, min_points: int = MIN_SLOPE_POINTS) -> SlopeFit:
    """OLS fit of log R_k on log k over the final ``window`` fraction of the series.

    Only points with R_k > 0 enter the fit.
    """
    k = np.asarray(k, dtype=float)
    regret = np.asarray(regret, dtype=float)
    if k.shape != regret.shape:
        raise InvalidParameterError("k and regret must have equal length")
    if not 0 < window <= 1:
        raise InvalidParameterError("window must lie in (0, 1]")
    start = len(k) - int(math.floor(len(k) * window + 1e-9))
    kw, rw = k[start:], regret[start:]
    keep = (rw > 0) & (kw > 0)
    if keep.sum() < min_points:
        raise InsufficientDataError(
            f"only {int(keep.sum())} positive regret points in the window; need {min_points}"
        )
    x, y = np.log(kw[keep]), np.log(rw[keep])
    xm, ym = x.mean(), y.mean()
    sxx = float(np.sum((x - xm) ** 2))
    if sxx == 0:
        raise InsufficientDataError("all window points share one k")
    slope = float(np.sum((x - xm) * (y - ym)) / sxx)
    intercept = float(ym - slope * xm)
    resid = y - (intercept + slope * x)
    syy = float(np.sum((y - ym) ** 2))
    r2 = 1.0 if syy == 0 else max(0.0, min(1.0, 1.0 - float(np.sum(resid**2)) / syy))
    return SlopeFit(slope, intercept, r2, window, int(keep.sum()))


# ---------------------------------------------------------------------------
# Per-seed runs and CSV output
# ---------------------------------------------------------------------------

CSV_FIXED = ("k", "level")


def _fmt(values) -> list[str]:
    # repr gives the shortest string that round-trips, so files are exact and stable
    return [repr(v) for v in np.asarray(values, dtype=float).tolist()]


def write_regret_csv(path, ledger: RegretLedger, stride: int = 1) -> int:
    """Write one row per observed sample (every ``stride``-th plus the last)."""
    level_idx, thetas, losses = ledger.per_sample()
    k, regret = compute_regret(ledger)
    cum = np.cumsum(losses)
    n = losses.size
    rows = np.arange(0, n, stride)
    if n and rows[-1] != n - 1:
        rows = np.append(rows, n - 1)
    d = thetas.shape[1] if thetas.ndim == 2 and n else 0
    header = ["k", "level"] + [f"theta_{i + 1}" for i in range(d)] + ["loss", "cum_loss", "regret"]
    cols = [[str(i + 1) for i in rows.tolist()], [LEVELS[j] for j in level_idx[rows].tolist()]]
    cols += [_fmt(thetas[rows, i]) for i in range(d)]
    cols += [_fmt(losses[rows]), _fmt(cum[rows]), _fmt(regret[rows])]
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        fh.writelines(",".join(r) + "\n" for r in zip(*cols))
    return len(rows)


def read_regret_csv(path) -> dict:
    """Load a per-seed CSV into numpy columns."""
    path = Path(path)
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    if header[:2] != list(CSV_FIXED) or header[-3:] != ["loss", "cum_loss", "regret"]:
        raise InvalidParameterError(f"{path} is not a regret CSV")
    raw = np.genfromtxt(path, delimiter=",", skip_header=1, dtype=str, ndmin=2)
    out = {"k": raw[:, 0].astype(np.int64), "level": raw[:, 1]}
    for j, name in enumerate(header[2:], start=2):
        out[name] = raw[:, j].astype(float)
    return out


def run_seed(cfg: ExperimentConfig, seed: int, oracle: OracleReport, out_dir: Optional[Path] = None) -> dict:
    """Run one seed in an isolated environment; optionally write its CSV."""
    t0 = time.perf_counter()
    env = _make_env(cfg)
    ledger = RegretLedger(oracle.pr_opt)
    rng = SeededRng(seed)
    if cfg.kind == "convex":
        T = _convex_T(cfg)
        theta_bar = minimize_convex_pr(env, T, ledger, rng)
        phi_bar = None
        loop_n = total_n = 2 * T
        warnings = 0
    else:
        oc = build_optimizer_config(cfg, env)
        res = minimize_pr(env, env.family, oc, ledger, rng)
        theta_bar, phi_bar = res.theta_bar, res.phi_bar
        loop_n, total_n, warnings = res.loop_n, res.total_n, res.inner_warnings
    if ledger.n_samples != env.sample_counter:
        raise AssertionError(
            f"ledger holds {ledger.n_samples} samples but the environment served {env.sample_counter}"
        )
    k, regret = compute_regret(ledger)
    try:
        fit = fit_slope(k, regret, cfg.slope_window)
        slope = asdict(fit)
    except InsufficientDataError as exc:
        slope = {"error": str(exc)}
    gap = env.true_pr(theta_bar) - oracle.pr_opt
    result = {
        "seed": seed,
        "theta_bar": np.asarray(theta_bar).tolist(),
        "phi_bar": None if phi_bar is None else np.asarray(phi_bar).tolist(),
        "pr_theta_bar": env.true_pr(theta_bar),
        "gap": gap,
        "success": bool(gap <= cfg.success_tol * env.F),
        "slope": slope,
        "final_regret": float(regret[-1]) if regret.size else 0.0,
        "loop_n": int(loop_n),
        "total_n": int(total_n),
        "inner_warnings": int(warnings),
    }
    if out_dir is not None:
        path = Path(out_dir) / f"seed_{seed}.csv"
        write_regret_csv(path, ledger, cfg.csv_stride)
        result["csv"] = path.name
    result["wall_time_s"] = time.perf_counter() - t0
    return result


def _run_seed_job(args):
    cfg_dict, seed, oracle_dict, out_dir = args
    cfg = ExperimentConfig.from_mapping(cfg_dict)
    oracle = OracleReport(
        theta_opt=np.asarray(oracle_dict["theta_opt"]),
        phi_opt=np.asarray(oracle_dict["phi_opt"]),
        pr_opt=oracle_dict["pr_opt"],
        grid_resolution=oracle_dict["grid_resolution"],
        grid_points=oracle_dict["grid_points"],
    )
    return run_seed(cfg, seed, oracle, out_dir)


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> dict:
    """Run every seed, write ``seed_<s>.csv`` files and ``report.json``; return the report."""
    t0 = time.perf_counter()
    derived = validate(cfg)
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    env = _make_env(cfg)
    oracle = brute_force_opt(env, cfg.oracle_resolution)
    log.info("oracle: theta_opt=%s pr_opt=%.6g", oracle.theta_opt.tolist(), oracle.pr_opt)
    jobs = [(cfg.to_dict(), seed, oracle.to_dict(), out) for seed in cfg.seeds]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            seeds = list(pool.map(_run_seed_job, jobs))
    else:
        seeds = []
        for job in jobs:
            seeds.append(_run_seed_job(job))
            log.info("seed %d done: gap=%.4g", job[1], seeds[-1]["gap"])
    slopes = [s["slope"]["slope"] for s in seeds if "slope" in s["slope"]]
    report = {
        "name": cfg.name,
        "config": cfg.to_dict(),
        "environment": env.describe(),
        "optimizer": derived,
        "oracle": oracle.to_dict(),
        "seeds": seeds,
        "aggregate": {
            "n_seeds": len(seeds),
            "median_slope": float(np.median(slopes)) if slopes else None,
            "slope_quantiles": (
                {q: float(np.quantile(slopes, float(q))) for q in ("0.1", "0.5", "0.9")} if slopes else None
            ),
            "theory_exponent": THEORY_EXPONENT,
            "success_rate": float(np.mean([s["success"] for s in seeds])),
            "success_tol": cfg.success_tol,
            "loop_n": derived["loop_n"],
            "total_n": seeds[0]["total_n"],
            "wall_time_s": time.perf_counter() - t0,
        },
    }
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report


# ---------------------------------------------------------------------------
# Convexity diagnostics
# ---------------------------------------------------------------------------


@dataclass
class ConvexityReport:
    axis: str
    grid: np.ndarray
    values: np.ndarray
    second_diff: np.ndarray
    min_second_diff: float
    witness: float
    convex: bool
    tol: float

    def to_dict(self) -> dict:
        return {
            "axis": self.axis,
            "convex": self.convex,
            "tol": self.tol,
            "min_second_diff": self.min_second_diff,
            "witness": self.witness,
            "grid": self.grid.tolist(),
            "values": self.values.tolist(),
            "second_diff": self.second_diff.tolist(),
        }


def second_differences(fn: Callable[[np.ndarray], np.ndarray], grid, tol: float = CONVEXITY_TOL,
                       axis: str = "x") -> ConvexityReport:
    """Classify ``fn`` on a uniform grid by its second central differences."""
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 3:
        raise InvalidParameterError("need a one-dimensional grid with at least 3 points")
    values = np.asarray(fn(grid), dtype=float).reshape(-1)
    d2 = values[2:] - 2.0 * values[1:-1] + values[:-2]
    i = int(np.argmin(d2))
    m = float(d2[i])
    return ConvexityReport(axis, grid, values, d2, m, float(grid[i + 1]), bool(m >= -tol), tol)


def _interior_grid(lo: float, hi: float, resolution: float) -> np.ndarray:
    if resolution <= 0:
        raise InvalidParameterError("resolution must be positive")
    num = int(round((hi - lo) / resolution))
    if num < 4:
        raise InvalidParameterError("resolution too coarse for the interval")
    return lo + resolution * np.arange(1, num)


def diag_convexity(env: Environment, axis: str = "theta", resolution: float = 0.01, *,
                   natural: bool = False, tol: float = CONVEXITY_TOL) -> ConvexityReport:
    """Second differences of the raw risk along theta, or along phi (optionally natural).

    The grid spans the interior of the model space (or of its image under the
    map) with spacing ``resolution``; endpoints are excluded.
    """
    if axis not in ("theta", "phi"):
        raise InvalidParameterError("axis must be theta or phi")
    if env.d_theta != 1 or (axis == "phi" and env.d_phi != 1):
        raise UnsupportedError("convexity diagnostics need a one-dimensional axis")
    lo, hi = float(env.theta_space.lower[0]), float(env.theta_space.upper[0])
    if axis == "theta":
        grid = _interior_grid(lo, hi, resolution)
        return second_differences(lambda g: env.raw_pr_many(g[:, None]), grid, tol, "theta")
    ends = np.array([env.phi_of([lo])[0], env.phi_of([hi])[0]])
    fam = env.family
    if natural:
        if not fam.is_exponential_family:
            raise UnsupportedError(f"{fam.name} has no natural parameterization")
        ends = np.sort(fam.natural(ends))
        to_phi = fam.mean_param
        name = "phi_natural"
    else:
        ends = np.sort(ends)
        to_phi = lambda g: g
        name = "phi"
    grid = _interior_grid(ends[0], ends[1], resolution)

    def pr_dagger(g):
        thetas = np.atleast_1d(env.theta_for_phi(to_phi(g))).reshape(-1, 1)
        return env.raw_pr_many(np.clip(thetas, lo, hi))

    return second_differences(pr_dagger, grid, tol, name)


# ---------------------------------------------------------------------------
# Exponential-family sufficient condition (Poisson)
# ---------------------------------------------------------------------------


@dataclass
class ExpfamReport:
    theta: np.ndarray
    lam: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    lhs_se: np.ndarray
    rhs_se: np.ndarray
    lhs_exact: np.ndarray
    rhs_exact: np.ndarray
    satisfied: np.ndarray
    all_satisfied: bool
    convexity: ConvexityReport
    implication_holds: Optional[bool]

    def to_dict(self) -> dict:
        return {
            "all_satisfied": self.all_satisfied,
            "implication_holds": self.implication_holds,
            "pr_dagger_convex": self.convexity.convex,
            "pr_dagger_min_second_diff": self.convexity.min_second_diff,
            "points": [
                {
                    "theta": float(t),
                    "lambda": float(l),
                    "lhs": float(a),
                    "rhs": float(b),
                    "lhs_se": float(sa),
                    "rhs_se": float(sb),
                    "lhs_exact": float(ea),
                    "rhs_exact": float(eb),
                    "satisfied": bool(s),
                }
                for t, l, a, b, sa, sb, ea, eb, s in zip(
                    self.theta, self.lam, self.lhs, self.rhs, self.lhs_se, self.rhs_se,
                    self.lhs_exact, self.rhs_exact, self.satisfied,
                )
            ],
        }


def diag_expfam_condition(env: Environment, theta_grid: Optional[Sequence] = None, n_draws: int = 10**6,
                          seed: int = 0, resolution: float = 0.01) -> ExpfamReport:
    """Check  lambda * PR(theta) <= (2 / eta'(theta)) * E[d loss/d theta * (z - lambda)]  per grid point.

    eta = log(lambda) is the natural parameter; expectations use ``n_draws``
    Poisson draws (exact truncated sums are reported alongside).  The raw
    loss is used.  When every point satisfies the condition, the risk must be
    convex in the natural parameter; that implication is checked with
    :func:`diag_convexity` over the same theta range.
    """
    from scipy import stats

    if env.family.name != "poisson_rate":
        raise UnsupportedError("the exponential-family condition is implemented for poisson_rate only")
    if env.d_theta != 1 or env.map_kind != "exp_convex":
        raise UnsupportedError("need scalar theta and an exp_convex map")
    lo, hi = float(env.theta_space.lower[0]), float(env.theta_space.upper[0])
    thetas = np.linspace(lo, hi, 11) if theta_grid is None else np.asarray(theta_grid, dtype=float).reshape(-1)
    spec = env.loss_spec
    root = SeededRng(seed)
    m = len(thetas)
    lam, lhs, rhs, lse, rse, lex, rex = (np.empty(m) for _ in range(7))
    for i, th in enumerate(thetas):
        theta = env.check_theta([th])
        l = float(env.phi_of(theta)[0])
        nat_deriv = env.map_derivative(theta) / l  # d log(lambda) / d theta
        z = root.child(i).generator.poisson(l, n_draws).astype(float)
        a = l * spec.raw(z, theta)
        b = (2.0 / nat_deriv) * spec.raw_grad_theta(z, theta) * (z - l)
        lam[i], lhs[i], rhs[i] = l, a.mean(), b.mean()
        lse[i], rse[i] = a.std() / math.sqrt(n_draws), b.std() / math.sqrt(n_draws)
        support = np.arange(env.family.support_max(l) + 1, dtype=float)
        pmf = stats.poisson.pmf(support, l)
        lex[i] = l * float(np.sum(pmf * spec.raw(support, theta)))
        rex[i] = (2.0 / nat_deriv) * float(np.sum(pmf * spec.raw_grad_theta(support, theta) * (support - l)))
    satisfied = lhs <= rhs
    conv = diag_convexity(env, "phi", resolution, natural=True)
    all_ok = bool(np.all(satisfied))
    return ExpfamReport(
        thetas, lam, lhs, rhs, lse, rse, lex, rex, satisfied, all_ok, conv,
        (conv.convex if all_ok else None),
    )


# ---------------------------------------------------------------------------
# Calibration
# ---------------------------------------------------------------------------

# grids the shipped calibration file was produced on
DEFAULT_CALIBRATION = {
    "bernoulli_label": {"params": {}, "grid": np.linspace(0.05, 0.95, 19).tolist()},
    "gaussian_mean": {"params": {}, "grid": np.linspace(-1.9, 1.9, 20).tolist()},
    "poisson_rate": {"params": {}, "grid": np.linspace(0.5, 4.5, 9).tolist()},
    "uniform_exp": {"params": {"c": 40.0, "param_space": [[0.0], [0.3]]}, "grid": np.linspace(0.02, 0.28, 8).tolist()},
}


def calibrate_family(family_name: str, eps: float, p: float, trials: int = 2000, seed: int = 0,
                     grid: Optional[Sequence] = None, store: Optional[CalibrationStore] = None,
                     family_params: Optional[dict] = None) -> KLCalibration:
    """Calibrate ``family_name`` at (eps, p) and merge the result into ``store``."""
    if family_name not in DEFAULT_CALIBRATION:
        raise ConfigError(f"unknown family {family_name!r}; choose from {sorted(DEFAULT_CALIBRATION)}")
    defaults = DEFAULT_CALIBRATION[family_name]
    params = dict(defaults["params"] if family_params is None else family_params)
    family = make_family(family_name, **params)
    grid = defaults["grid"] if grid is None else grid
    cal = calibrate_kl(family, grid, trials, eps, p, seed=seed)
    for run in cal.runs:
        run["family_params"] = params
    if store is not None:
        store.update(cal)
    return cal
