"""Bandit optimizers for performative risk.

* :func:`minimize_convex_pr`: two-point bandit descent on a risk that is convex
  in the model parameter.
* :func:`learn_model`: the inner loop.  Finds a model whose induced
  distribution matches a target parameter by bandit descent on the estimated
  KL divergence.
* :func:`minimize_pr`: the outer loop.  Bandit descent over distribution
  parameters, where each query point is realized through :func:`learn_model`
  and scored through :func:`estimate_pr`.

Every sample any of them observes is charged to a :class:`RegretLedger`.
Perturbations are scaled by the inradius of the space (``ParamSpace.scale``),
so ``delta`` and ``delta_lm`` are dimensionless fractions in ``(0, 1)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core_math import ParamSpace, SeededRng, project, project_shrunk, sample_unit_sphere
from .divergence import CalibrationStore, estimate_kl, n_kl
from .environments import DistributionFamily, Environment
from .errors import ConfigError, InvalidParameterError

__all__ = [
    "OptimizerConfig",
    "RegretLedger",
    "LedgerRecord",
    "RunResult",
    "two_point_gradient",
    "estimate_pr",
    "minimize_convex_pr",
    "learn_model",
    "minimize_pr",
    "compute_regret",
    "loop_sample_count",
]

OVERRIDABLE = ("T", "S", "n_kl", "delta", "delta_lm", "eta", "eta_lm")


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass
class OptimizerConfig:
    """Tolerances of the two-level method and the step counts they imply.

    Defaults follow the algorithm formulas::

        T  = ceil(d_phi / (eps - sqrt(eps_lm d_phi))**2),     delta    = sqrt(eps_lm d_phi),
        eta = 1 / sqrt(d_phi T)
        S  = ceil(d_theta / (eps_lm - sqrt(eps_kl d_theta))**2), delta_lm = sqrt(eps_kl d_theta),
        eta_lm = 1 / sqrt(d_theta S)

    Any derived quantity can be pinned through ``overrides``.  ``n_kl`` comes
    from the calibrated estimator unless overridden; without either it stays
    ``None`` and :func:`learn_model` refuses to run.
    """

    eps: float
    p: float
    eps_lm: float
    p_lm: float
    eps_kl: float
    p_kl: float
    d_theta: int = 1
    d_phi: int = 1
    family: Optional[DistributionFamily] = None
    overrides: dict = field(default_factory=dict)
    store: Optional[CalibrationStore] = None

    def __post_init__(self):
        for name in ("eps", "eps_lm", "eps_kl"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("p", "p_lm", "p_kl"):
            if not 0 < getattr(self, name) < 1:
                raise ConfigError(f"{name} must lie in (0, 1)")
        if self.d_theta < 1 or self.d_phi < 1:
            raise ConfigError("dimensions must be positive")
        unknown = set(self.overrides) - set(OVERRIDABLE)
        if unknown:
            raise ConfigError(f"unknown overrides {sorted(unknown)}; allowed: {OVERRIDABLE}")
        gap_outer = self.eps - math.sqrt(self.eps_lm * self.d_phi)
        gap_inner = self.eps_lm - math.sqrt(self.eps_kl * self.d_theta)
        if gap_outer <= 0:
            raise ConfigError("infeasible tolerances: need eps > sqrt(eps_lm * d_phi)")
        if gap_inner <= 0:
            raise ConfigError("infeasible tolerances: need eps_lm > sqrt(eps_kl * d_theta)")
        ov = self.overrides
        self.T = int(ov.get("T", _ceil(self.d_phi / gap_outer**2)))
        self.S = int(ov.get("S", _ceil(self.d_theta / gap_inner**2)))
        self.delta = float(ov.get("delta", math.sqrt(self.eps_lm * self.d_phi)))
        self.delta_lm = float(ov.get("delta_lm", math.sqrt(self.eps_kl * self.d_theta)))
        self.eta = float(ov.get("eta", 1.0 / math.sqrt(self.d_phi * self.T)))
        self.eta_lm = float(ov.get("eta_lm", 1.0 / math.sqrt(self.d_theta * self.S)))
        if "n_kl" in ov:
            self.N_KL = int(ov["n_kl"])
        elif self.family is not None:
            self.N_KL = n_kl(self.family, self.eps_kl, self.p_kl, store=self.store)
        else:
            self.N_KL = None
        if self.T < 1 or self.S < 1 or (self.N_KL is not None and self.N_KL < 1):
            raise ConfigError("T, S and n_kl must be positive")
        if not 0 < self.delta < 1 or not 0 < self.delta_lm < 1:
            raise ConfigError(
                f"perturbation radii must lie in (0, 1); got delta={self.delta}, delta_lm={self.delta_lm}"
            )
        if self.eta <= 0 or self.eta_lm <= 0:
            raise ConfigError("step sizes must be positive")

    @classmethod
    def for_environment(cls, env: Environment, **kwargs) -> "OptimizerConfig":
        kwargs.setdefault("d_theta", env.d_theta)
        kwargs.setdefault("d_phi", env.d_phi)
        kwargs.setdefault("family", env.family)
        return cls(**kwargs)

    @classmethod
    def budget_schedule(
        cls,
        budget: int,
        n_kl: int,
        d_theta: int = 1,
        d_phi: int = 1,
        p: float = 0.05,
        p_lm: float = 0.05,
        p_kl: float = 0.05,
        **kwargs,
    ) -> "OptimizerConfig":
        """Tolerances tied to a sample budget fixed in advance.

        eps_lm = (n_kl / budget)**(1/3), eps_kl = (n_kl / budget)**(2/3) / (4 d_theta);
        T is the largest count whose total sample use fits the budget.
        """
        ratio = n_kl / budget
        eps_lm = ratio ** (1.0 / 3.0)
        eps_kl = ratio ** (2.0 / 3.0) / (4.0 * d_theta)
        S = _ceil(d_theta / (eps_lm - math.sqrt(eps_kl * d_theta)) ** 2)
        T = max(1, budget // (2 * (2 * n_kl * S + 1)))
        eps = math.sqrt(eps_lm * d_phi) + math.sqrt(d_phi / T)
        overrides = {"T": T, "S": S, "n_kl": n_kl, **kwargs.pop("overrides", {})}
        return cls(eps, p, eps_lm, p_lm, eps_kl, p_kl, d_theta, d_phi, overrides=overrides, **kwargs)

    @property
    def loop_n(self) -> int:
        if self.N_KL is None:
            raise ConfigError("n_kl unresolved")
        return loop_sample_count(self.T, self.S, self.N_KL)

    def derived(self) -> dict:
        return {
            "T": self.T,
            "S": self.S,
            "n_kl": self.N_KL,
            "delta": self.delta,
            "delta_lm": self.delta_lm,
            "eta": self.eta,
            "eta_lm": self.eta_lm,
        }

    def to_dict(self) -> dict:
        return {
            "eps": self.eps,
            "p": self.p,
            "eps_lm": self.eps_lm,
            "p_lm": self.p_lm,
            "eps_kl": self.eps_kl,
            "p_kl": self.p_kl,
            "d_theta": self.d_theta,
            "d_phi": self.d_phi,
            "overrides": dict(self.overrides),
            "derived": self.derived(),
        }


def _ceil(x: float) -> int:
    """Ceiling that ignores floating-point noise just above an integer."""
    return math.ceil(x - 1e-9 * max(1.0, abs(x)))


def loop_sample_count(T: int, S: int, n_kl: int) -> int:
    """Samples consumed by the outer loop, excluding the final model fit."""
    return 2 * (2 * n_kl * S + 1) * T


# ---------------------------------------------------------------------------
# Ledger
# ---------------------------------------------------------------------------

LEVELS = ("outer", "inner", "estimate_pr")


@dataclass
class LedgerRecord:
    step: int
    level: str
    theta: np.ndarray
    losses: np.ndarray

    @property
    def n(self) -> int:
        return self.losses.size


class RegretLedger:
    """Append-only log of every deployment and the loss of every observed sample."""

    def __init__(self, pr_opt: Optional[float] = None):
        self.records: list[LedgerRecord] = []
        self.pr_opt = pr_opt
        self._n = 0

    def append(self, level: str, theta, losses) -> None:
        if level not in LEVELS:
            raise InvalidParameterError(f"unknown ledger level {level!r}")
        losses = np.atleast_1d(np.asarray(losses, dtype=float))
        self.records.append(LedgerRecord(len(self.records), level, np.array(theta, dtype=float), losses))
        self._n += losses.size

    @property
    def n_samples(self) -> int:
        return self._n

    def losses(self) -> np.ndarray:
        if not self.records:
            return np.zeros(0)
        return np.concatenate([r.losses for r in self.records])

    def per_sample(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(level index per sample, theta per sample, loss per sample)."""
        if not self.records:
            return np.zeros(0, dtype=int), np.zeros((0, 0)), np.zeros(0)
        counts = np.array([r.n for r in self.records])
        level_idx = np.repeat([LEVELS.index(r.level) for r in self.records], counts)
        thetas = np.repeat(np.stack([r.theta for r in self.records]), counts, axis=0)
        return level_idx, thetas, self.losses()

    def count(self, level: str) -> int:
        return sum(r.n for r in self.records if r.level == level)


def compute_regret(ledger: RegretLedger) -> tuple[np.ndarray, np.ndarray]:
    """Cumulative regret R_k = sum of the first k losses - k * pr_opt, for k = 1..N."""
    if ledger.pr_opt is None:
        raise InvalidParameterError("ledger has no pr_opt; attach an oracle report first")
    losses = ledger.losses()
    k = np.arange(1, losses.size + 1)
    return k, np.cumsum(losses) - k * ledger.pr_opt


# ---------------------------------------------------------------------------
# Run results
# ---------------------------------------------------------------------------


@dataclass
class RunResult:
    theta_bar: np.ndarray
    phi_bar: Optional[np.ndarray]
    ledger: RegretLedger
    trace: list = field(default_factory=list)
    loop_n: Optional[int] = None
    total_n: int = 0
    inner_warnings: int = 0


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------


def two_point_gradient(d: int, delta: float, f_plus: float, f_minus: float, u) -> np.ndarray:
    """(d / (2 delta)) * (f_plus - f_minus) * u."""
    if not delta > 0:
        raise InvalidParameterError(f"delta must be positive, got {delta}")
    u = np.asarray(u, dtype=float)
    if abs(float(np.sqrt(u @ u)) - 1.0) > 1e-9:
        raise InvalidParameterError("u must be a unit vector")
    return (d / (2.0 * delta)) * (f_plus - f_minus) * u


def estimate_pr(env: Environment, theta, rng, ledger: Optional[RegretLedger] = None) -> float:
    """Deploy ``theta`` once and return the loss of the single observed sample."""
    z = env.deploy(theta, 1, rng)
    loss = env.loss(z, theta)
    if ledger is not None:
        ledger.append("estimate_pr", theta, loss)
    return float(loss[0])


def _check_feasible(space: ParamSpace, x, delta: float, what: str) -> None:
    if not space.shrunk(delta).contains(x, tol=1e-12):
        raise AssertionError(f"{what} {np.asarray(x).tolist()} left the shrunk space")


# ---------------------------------------------------------------------------
# Convex warm-up
# ---------------------------------------------------------------------------


def minimize_convex_pr(env: Environment, T: int, ledger: RegretLedger, rng: SeededRng,
                       trace: Optional[list] = None) -> np.ndarray:
    """Two-point bandit descent on a risk convex in theta; returns the mean iterate.

    Uses delta = sqrt(d/T), eta = 1/sqrt(d T) and exactly 2T samples.
    """
    if T < 1:
        raise InvalidParameterError("T must be at least 1")
    space = env.theta_space
    d = env.d_theta
    delta = math.sqrt(d / T)
    if not delta < 1:
        raise InvalidParameterError(f"T={T} gives delta={delta:g} >= 1; use T > d_theta")
    eta = 1.0 / math.sqrt(d * T)
    radius = delta * space.scale
    dirs, draws = rng.child(0), rng.child(1)
    theta = space.center.copy()
    total = np.zeros(d)
    for t in range(T):
        total += theta
        u = sample_unit_sphere(d, dirs)
        f_plus = estimate_pr(env, theta + radius * u, draws, ledger)
        f_minus = estimate_pr(env, theta - radius * u, draws, ledger)
        g = two_point_gradient(d, radius, f_plus, f_minus, u)
        if trace is not None:
            trace.append({"t": t, "theta": theta.tolist(), "grad_norm": float(np.linalg.norm(g))})
        theta = project_shrunk(space, theta - eta * g, delta)
    return total / T


# ---------------------------------------------------------------------------
# Inner loop
# ---------------------------------------------------------------------------


@dataclass
class _InnerOutput:
    theta_bar: np.ndarray
    last_kl: float


def _learn_model(env: Environment, family: DistributionFamily, phi_target, cfg: OptimizerConfig,
                 ledger: Optional[RegretLedger], rng: SeededRng, check: bool = True) -> _InnerOutput:
    if cfg.N_KL is None:
        raise ConfigError("n_kl is unresolved: calibrate the family or override n_kl")
    space = env.theta_space
    d = env.d_theta
    S, n, delta, eta = cfg.S, cfg.N_KL, cfg.delta_lm, cfg.eta_lm
    radius = delta * space.scale
    dirs, draws = rng.child(0), rng.child(1)
    gen = draws.generator
    theta = space.center.copy()
    total = np.zeros(d)
    kl_plus = kl_minus = float("nan")
    for _ in range(S):
        if check:
            _check_feasible(space, theta, delta, "inner iterate")
        total += theta
        u = sample_unit_sphere(d, dirs)
        th_plus, th_minus = theta + radius * u, theta - radius * u
        z_plus = env.deploy(th_plus, n, gen)
        z_minus = env.deploy(th_minus, n, gen)
        if ledger is not None:
            ledger.append("inner", th_plus, env.loss(z_plus, th_plus))
            ledger.append("inner", th_minus, env.loss(z_minus, th_minus))
        kl_plus = estimate_kl(family, phi_target, z_plus, cfg.eps_kl, cfg.p_kl, n_required=n).value
        kl_minus = estimate_kl(family, phi_target, z_minus, cfg.eps_kl, cfg.p_kl, n_required=n).value
        g = (d / (2.0 * radius)) * (kl_plus - kl_minus) * u
        theta = project_shrunk(space, theta - eta * g, delta)
    return _InnerOutput(total / S, 0.5 * (kl_plus + kl_minus))


def learn_model(env: Environment, family: DistributionFamily, phi_target, cfg: OptimizerConfig,
                ledger: Optional[RegretLedger], rng: SeededRng) -> np.ndarray:
    """Find a model that approximately induces ``phi_target``; returns the mean iterate.

    Runs ``cfg.S`` steps of two-point descent on the estimated KL divergence,
    deploying ``cfg.N_KL`` samples at each of the two query models per step.
    """
    target = np.asarray(phi_target, dtype=float).reshape(-1)
    if not family.param_space.contains(target, tol=1e-12):
        raise InvalidParameterError(f"target {target.tolist()} outside the distribution space")
    return _learn_model(env, family, target, cfg, ledger, rng).theta_bar


# ---------------------------------------------------------------------------
# Outer loop
# ---------------------------------------------------------------------------


def minimize_pr(env: Environment, family: DistributionFamily, cfg: OptimizerConfig,
                ledger: RegretLedger, rng: SeededRng) -> RunResult:
    """Bandit descent over distribution parameters with learned realizing models.

    Returns the model fitted to the mean distribution iterate together with
    that mean.  The final fit's samples are charged to the ledger, so
    ``total_n = loop_n + 2 * N_KL * S``.
    """
    if cfg.N_KL is None:
        raise ConfigError("n_kl is unresolved: calibrate the family or override n_kl")
    phi_space = family.param_space
    d = family.dim
    T, delta, eta = cfg.T, cfg.delta, cfg.eta
    radius = delta * phi_space.scale
    dirs, pr_draws = rng.child(0), rng.child(1)
    start = ledger.n_samples
    phi = phi_space.center.copy()
    total = np.zeros(d)
    trace = []
    warnings = 0
    for t in range(T):
        _check_feasible(phi_space, phi, delta, "outer iterate")
        total += phi
        u = sample_unit_sphere(d, dirs)
        # the projection only absorbs rounding: phi lies in the delta-shrunk space
        phi_plus = project(phi_space, phi + radius * u)
        phi_minus = project(phi_space, phi - radius * u)
        inner_plus = _learn_model(env, family, phi_plus, cfg, ledger, rng.child(2, 2 * t))
        inner_minus = _learn_model(env, family, phi_minus, cfg, ledger, rng.child(2, 2 * t + 1))
        for out in (inner_plus, inner_minus):
            if out.last_kl > cfg.eps_lm:
                warnings += 1
        f_plus = estimate_pr(env, inner_plus.theta_bar, pr_draws, ledger)
        f_minus = estimate_pr(env, inner_minus.theta_bar, pr_draws, ledger)
        g = two_point_gradient(d, radius, f_plus, f_minus, u)
        trace.append(
            {
                "t": t,
                "phi": phi.tolist(),
                "theta_plus": inner_plus.theta_bar.tolist(),
                "theta_minus": inner_minus.theta_bar.tolist(),
                "kl_plus": inner_plus.last_kl,
                "kl_minus": inner_minus.last_kl,
                "f_plus": f_plus,
                "f_minus": f_minus,
                "grad_norm": float(np.linalg.norm(g)),
            }
        )
        phi = project_shrunk(phi_space, phi - eta * g, delta)
    phi_bar = total / T
    loop_n = ledger.n_samples - start
    final = _learn_model(env, family, phi_bar, cfg, ledger, rng.child(3))
    return RunResult(
        theta_bar=final.theta_bar,
        phi_bar=phi_bar,
        ledger=ledger,
        trace=trace,
        loop_n=loop_n,
        total_n=ledger.n_samples - start,
        inner_warnings=warnings,
    )
