"""Closed-form KL divergences and the plug-in KL estimation oracle.

``estimate_kl`` fits the family by maximum likelihood on the observed samples
and evaluates the closed-form divergence from the target to the fitted
parameter.  The number of samples it needs is

    N_KL(eps, p) = ceil(c_cal * log(2 / p) / eps**2)

with a per-family constant ``c_cal`` found by Monte Carlo calibration and
persisted as JSON.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core_math import SeededRng, as_vector
from .environments import DistributionFamily
from .errors import (
    CalibrationFailureError,
    CalibrationMissingError,
    InsufficientSamplesError,
    InvalidParameterError,
)

__all__ = [
    "KLEstimate",
    "KLCalibration",
    "CalibrationStore",
    "kl_closed_form",
    "estimate_kl",
    "n_kl",
    "calibrate_kl",
    "failure_rates",
    "default_store",
]

PARAM_TOL = 1e-12
MAX_DOUBLINGS = 30


@dataclass
class KLEstimate:
    value: float
    n_samples_used: int
    target_phi: np.ndarray
    fitted_phi: np.ndarray


def _check_param(family: DistributionFamily, phi) -> np.ndarray:
    phi = as_vector(phi, family.dim)
    if not family.param_space.contains(phi, tol=PARAM_TOL):
        raise InvalidParameterError(f"{family.name}: parameter {phi.tolist()} outside parameter space")
    return phi


def kl_closed_form(family: DistributionFamily, phi1, phi2) -> float:
    """KL(phi1 || phi2) within ``family``; ``inf`` when supports mismatch."""
    a = _check_param(family, phi1)
    b = _check_param(family, phi2)
    return float(family.kl(a, b))


def estimate_kl(
    family: DistributionFamily,
    phi_target,
    samples,
    eps_kl: float,
    p_kl: float,
    *,
    n_required: Optional[int] = None,
    store: Optional["CalibrationStore"] = None,
) -> KLEstimate:
    """Plug-in estimate of KL(phi_target || phi') from samples drawn at phi'.

    ``n_required`` replaces the calibrated sample requirement when the caller
    fixes the per-query budget explicitly.
    """
    samples = np.asarray(samples, dtype=float)
    n = samples.shape[0]
    need = n_required if n_required is not None else n_kl(family, eps_kl, p_kl, store=store)
    if n < need:
        raise InsufficientSamplesError(f"{family.name}: {n} samples given, {need} required")
    target = _check_param(family, phi_target)
    fitted = family.clamp_interior(family.mle(samples), n)
    return KLEstimate(float(family.kl(target, fitted)), n, target, fitted)


# ---------------------------------------------------------------------------
# Calibration
# ---------------------------------------------------------------------------


@dataclass
class KLCalibration:
    """Calibrated sample-size constant for one family.

    ``runs`` records every calibration pass (eps, p, grid, trials, seed, the
    minimal sample count found and the worst failure rate there); ``c_cal`` is
    the largest constant any pass required.
    """

    family: str
    c_cal: float
    runs: list = field(default_factory=list)

    def merge(self, other: "KLCalibration") -> "KLCalibration":
        runs = self.runs + other.runs
        return KLCalibration(self.family, max(self.c_cal, other.c_cal), runs)


class CalibrationStore:
    """Collection of per-family calibrations backed by a JSON file."""

    def __init__(self, entries: Optional[dict] = None, path: Optional[Path] = None):
        self.entries: dict[str, KLCalibration] = dict(entries or {})
        self.path = path

    @classmethod
    def load(cls, path) -> "CalibrationStore":
        path = Path(path)
        data = json.loads(path.read_text())
        entries = {
            name: KLCalibration(name, float(e["c_cal"]), list(e.get("runs", [])))
            for name, e in data.get("families", {}).items()
        }
        return cls(entries, path)

    def save(self, path=None) -> Path:
        path = Path(path or self.path)
        payload = {
            "format": "perfzo-kl-calibration/1",
            "families": {
                name: {"c_cal": cal.c_cal, "runs": cal.runs}
                for name, cal in sorted(self.entries.items())
            },
        }
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(payload, indent=2) + "\n")
        return path

    def get(self, family_name: str) -> KLCalibration:
        try:
            return self.entries[family_name]
        except KeyError:
            raise CalibrationMissingError(
                f"no KL calibration for {family_name!r}; run `perfzo calibrate {family_name}`"
            ) from None

    def update(self, cal: KLCalibration) -> None:
        old = self.entries.get(cal.family)
        self.entries[cal.family] = old.merge(cal) if old else cal


_DEFAULT_STORE: Optional[CalibrationStore] = None


def default_store() -> CalibrationStore:
    """Calibration shipped with the package (``PERFZO_KL_CALIBRATION`` overrides)."""
    global _DEFAULT_STORE
    import os

    env_path = os.environ.get("PERFZO_KL_CALIBRATION")
    if env_path:
        return CalibrationStore.load(env_path)
    if _DEFAULT_STORE is None:
        ref = resources.files("perfzo") / "data" / "kl_calibration.json"
        with resources.as_file(ref) as p:
            _DEFAULT_STORE = CalibrationStore.load(p) if Path(p).exists() else CalibrationStore()
    return _DEFAULT_STORE


def n_from_constant(c_cal: float, eps_kl: float, p_kl: float) -> int:
    if eps_kl <= 0:
        raise InvalidParameterError("eps_kl must be positive")
    if not 0 < p_kl < 1:
        raise InvalidParameterError("p_kl must lie in (0, 1)")
    return max(1, math.ceil(c_cal * math.log(2.0 / p_kl) / eps_kl**2))


def n_kl(family, eps_kl: float, p_kl: float, *, store: Optional[CalibrationStore] = None) -> int:
    """Calibrated sample count for the estimation contract at (eps_kl, p_kl)."""
    name = family if isinstance(family, str) else family.name
    cal = (store or default_store()).get(name)
    return n_from_constant(cal.c_cal, eps_kl, p_kl)


def failure_rates(
    family: DistributionFamily,
    grid: np.ndarray,
    n: int,
    trials: int,
    eps: float,
    rng: SeededRng,
) -> np.ndarray:
    """Failure frequency of |KL_hat - KL| > eps for every (target, source) grid pair.

    Row i is the target ``grid[i]``, column j the sampling parameter ``grid[j]``.
    """
    grid = np.asarray(grid, dtype=float).reshape(len(grid), family.dim)
    rates = np.empty((len(grid), len(grid)))
    for j, src in enumerate(grid):
        fitted = family.clamp_interior(family.mle_draws(src, n, trials, rng.child(j).generator), n)
        for i, tgt in enumerate(grid):
            truth = family.kl(tgt, src)
            est = family.kl(tgt[None, :], fitted)
            rates[i, j] = np.mean(~(np.abs(est - truth) <= eps))
    return rates


def calibrate_kl(
    family: DistributionFamily,
    grid: Sequence,
    trials: int,
    eps: float,
    p: float,
    seed: int = 0,
) -> KLCalibration:
    """Find the smallest sample count whose worst grid-pair failure rate is at most ``p``.

    Sample counts are doubled from 1 until the contract holds, then bisected.
    Every candidate count uses its own fixed random stream, so reruns agree.
    """
    if eps <= 0 or not 0 < p < 1 or trials < 1:
        raise InvalidParameterError("need eps > 0, p in (0, 1) and trials >= 1")
    grid = np.asarray(grid, dtype=float).reshape(-1, family.dim)
    for g in grid:
        _check_param(family, g)
    root = SeededRng(seed)
    cache: dict[int, float] = {}

    def worst(n: int) -> float:
        if n not in cache:
            cache[n] = float(np.max(failure_rates(family, grid, n, trials, eps, root.child(n))))
        return cache[n]

    n_hi = 1
    doublings = 0
    while worst(n_hi) > p:
        doublings += 1
        if doublings > MAX_DOUBLINGS:
            raise CalibrationFailureError(
                f"{family.name}: contract still fails at n={n_hi} after {MAX_DOUBLINGS} doublings"
            )
        n_hi *= 2
    n_lo = n_hi // 2  # fails (or zero)
    while n_hi - n_lo > 1:
        mid = (n_lo + n_hi) // 2
        if worst(mid) <= p:
            n_hi = mid
        else:
            n_lo = mid
    log_term = math.log(2.0 / p)
    # the smallest constant whose ceiling reproduces n_hi at (eps, p)
    c_cal = (n_hi - 0.5) * eps**2 / log_term
    run = {
        "eps": eps,
        "p": p,
        "grid": grid.tolist(),
        "trials": trials,
        "seed": seed,
        "n_min": n_hi,
        "worst_failure_rate": worst(n_hi),
        "c": c_cal,
    }
    return KLCalibration(family.name, c_cal, [run])
