"""Synthetic performative environments.

An :class:`Environment` hides a distribution map ``theta -> phi`` and exposes
only a deployment channel: deploy a model, observe i.i.d. samples from the
induced distribution.  Ground-truth accessors (``true_pr``, ``phi_of``,
``pr_dagger``) exist for ledgers, tests and diagnostics; optimizers never call
them.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import integrate, special, stats

from .core_math import ParamSpace, SeededRng, as_vector
from .errors import (
    ConfigError,
    InfeasibleModelError,
    InvalidDimensionError,
    InvalidParameterError,
    LossBoundError,
    OracleFailureError,
    OracleUnsupportedError,
    UnsupportedError,
)

__all__ = [
    "DistributionFamily",
    "Bernoulli",
    "GaussianMean",
    "PoissonRate",
    "UniformExp",
    "DistributionMap",
    "LossSpec",
    "Environment",
    "OracleReport",
    "brute_force_opt",
    "make_family",
    "make_environment",
    "ENVIRONMENTS",
]

DEPLOY_TOL = 1e-9
QUAD_TOL = 1e-8


def _gen(rng):
    return rng.generator if isinstance(rng, SeededRng) else rng


# ---------------------------------------------------------------------------
# Distribution families
# ---------------------------------------------------------------------------


class DistributionFamily:
    """A parametric family ``p(z; phi)`` known to the learner.

    Parameters are arrays whose last axis has length ``dim``; ``kl`` and the
    exponential-family accessors broadcast over leading axes.
    """

    name: str = ""
    event_shape: tuple = ()
    param_space: ParamSpace

    @property
    def dim(self) -> int:
        return self.param_space.dim

    def sample(self, phi, n: int, rng) -> np.ndarray:
        raise NotImplementedError

    def logpdf(self, z, phi) -> np.ndarray:
        raise NotImplementedError

    def mle(self, samples) -> np.ndarray:
        raise NotImplementedError

    def mle_draws(self, phi, n: int, size: int, rng) -> np.ndarray:
        """Draw ``size`` maximum-likelihood estimates, each from ``n`` samples at ``phi``.

        Distributionally identical to ``mle(sample(phi, n))`` repeated, but
        drawn through the sufficient statistic.
        """
        raise NotImplementedError

    def kl(self, phi1, phi2) -> np.ndarray:
        raise NotImplementedError

    def clamp_interior(self, phi, n: int) -> np.ndarray:
        """Clamp into the parameter space shrunk by ``1/(2n)`` of its width on every side.

        On the unit interval this is an absolute margin of ``1/(2n)``; scaling
        by the width keeps the margin from swamping narrow spaces.
        """
        ps = self.param_space
        if ps.kind == "box":
            half = np.maximum(ps.extent * (1.0 - 1.0 / n), 0.0)
            return np.clip(phi, ps.center - half, ps.center + half)
        r = ps.extent * (1.0 - 1.0 / n)
        diff = np.asarray(phi, dtype=float) - ps.center
        norm = np.linalg.norm(diff, axis=-1, keepdims=True)
        factor = np.where(norm > r, r / np.where(norm > 0, norm, 1.0), 1.0)
        return ps.center + diff * factor

    # exponential-family form log p = eta . T(z) - A(eta) + B(z)
    @property
    def is_exponential_family(self) -> bool:
        return True

    def natural(self, phi):
        raise UnsupportedError(f"{self.name} has no exponential-family form")

    def mean_param(self, eta):
        raise UnsupportedError(f"{self.name} has no exponential-family form")

    def sufficient_stat(self, z):
        raise UnsupportedError(f"{self.name} has no exponential-family form")

    def log_partition(self, eta):
        raise UnsupportedError(f"{self.name} has no exponential-family form")

    def log_partition_grad(self, eta):
        raise UnsupportedError(f"{self.name} has no exponential-family form")

    def log_partition_hess(self, eta):
        raise UnsupportedError(f"{self.name} has no exponential-family form")

    def base_measure(self, z):
        raise UnsupportedError(f"{self.name} has no exponential-family form")

    def normalization_error(self, phi) -> float:
        """|total mass - 1| of the density at ``phi``."""
        raise NotImplementedError

    def check_normalization(self, points: int = 5, tol: float = 1e-6) -> None:
        ps = self.param_space
        lo, hi = ps.center - ps.scale, ps.center + ps.scale
        for w in np.linspace(0.0, 1.0, points):
            phi = lo + w * (hi - lo)
            err = self.normalization_error(phi)
            if not err <= tol:
                raise InvalidParameterError(
                    f"{self.name}: density mass off by {err:g} at phi={phi}"
                )

    def describe(self) -> dict:
        return {"name": self.name, "param_space": self.param_space.to_dict()}


class Bernoulli(DistributionFamily):
    name = "bernoulli_label"

    def __init__(self, param_space: Optional[ParamSpace] = None):
        ps = param_space or ParamSpace.box([0.0], [1.0])
        if ps.dim != 1 or np.any(ps.lower < 0) or np.any(ps.upper > 1):
            raise InvalidParameterError("Bernoulli parameter space must lie in [0, 1]")
        self.param_space = ps
        self.check_normalization()

    def sample(self, phi, n, rng):
        return (_gen(rng).random(n) < phi[0]).astype(float)

    def logpdf(self, z, phi):
        p = np.asarray(phi, dtype=float)[..., 0]
        z = np.asarray(z, dtype=float)
        return special.xlogy(z, p) + special.xlogy(1.0 - z, 1.0 - p)

    def mle(self, samples):
        return np.array([np.mean(samples)])

    def mle_draws(self, phi, n, size, rng):
        return (_gen(rng).binomial(n, phi[0], size) / n)[:, None]

    def kl(self, phi1, phi2):
        p = np.asarray(phi1, dtype=float)[..., 0]
        q = np.asarray(phi2, dtype=float)[..., 0]
        with np.errstate(divide="ignore", invalid="ignore"):
            val = (
                special.xlogy(p, p)
                - special.xlogy(p, q)
                + special.xlogy(1.0 - p, 1.0 - p)
                - special.xlogy(1.0 - p, 1.0 - q)
            )
        return np.where(np.isnan(val), np.inf, val)

    def natural(self, phi):
        return special.logit(np.asarray(phi, dtype=float))

    def mean_param(self, eta):
        return special.expit(np.asarray(eta, dtype=float))

    def sufficient_stat(self, z):
        return np.asarray(z, dtype=float)

    def log_partition(self, eta):
        return np.logaddexp(0.0, np.asarray(eta, dtype=float)[..., 0])

    def log_partition_grad(self, eta):
        return special.expit(np.asarray(eta, dtype=float))

    def log_partition_hess(self, eta):
        s = special.expit(np.asarray(eta, dtype=float)[..., 0])
        return s * (1.0 - s)

    def base_measure(self, z):
        return np.zeros(np.shape(z))

    def normalization_error(self, phi):
        return abs(float(np.exp(self.logpdf(0.0, phi)) + np.exp(self.logpdf(1.0, phi))) - 1.0)


class GaussianMean(DistributionFamily):
    """Isotropic Gaussian with unknown mean and known variance ``sigma**2``."""

    name = "gaussian_mean"

    def __init__(self, param_space: Optional[ParamSpace] = None, sigma: float = 1.0):
        self.param_space = param_space or ParamSpace.box([-2.0], [2.0])
        if sigma <= 0:
            raise InvalidParameterError("sigma must be positive")
        self.sigma = float(sigma)
        self.event_shape = (self.param_space.dim,)
        self.check_normalization()

    def sample(self, phi, n, rng):
        return phi + self.sigma * _gen(rng).standard_normal((n, phi.size))

    def logpdf(self, z, phi):
        z = np.asarray(z, dtype=float)
        d = self.dim
        sq = np.sum((z - phi) ** 2, axis=-1)
        return -0.5 * sq / self.sigma**2 - 0.5 * d * np.log(2 * np.pi * self.sigma**2)

    def mle(self, samples):
        return np.mean(np.asarray(samples, dtype=float).reshape(-1, self.dim), axis=0)

    def mle_draws(self, phi, n, size, rng):
        return phi + self.sigma / np.sqrt(n) * _gen(rng).standard_normal((size, phi.size))

    def kl(self, phi1, phi2):
        diff = np.asarray(phi1, dtype=float) - np.asarray(phi2, dtype=float)
        return np.sum(diff**2, axis=-1) / (2.0 * self.sigma**2)

    def natural(self, phi):
        return np.asarray(phi, dtype=float) / self.sigma**2

    def mean_param(self, eta):
        return np.asarray(eta, dtype=float) * self.sigma**2

    def sufficient_stat(self, z):
        return np.asarray(z, dtype=float)

    def log_partition(self, eta):
        return 0.5 * self.sigma**2 * np.sum(np.asarray(eta, dtype=float) ** 2, axis=-1)

    def log_partition_grad(self, eta):
        return self.sigma**2 * np.asarray(eta, dtype=float)

    def log_partition_hess(self, eta):
        return np.full(np.shape(eta)[:-1], self.sigma**2)

    def base_measure(self, z):
        z = np.asarray(z, dtype=float)
        return -0.5 * np.sum(z**2, axis=-1) / self.sigma**2 - 0.5 * self.dim * np.log(
            2 * np.pi * self.sigma**2
        )

    def normalization_error(self, phi):
        # the density factorizes over axes, so one axis suffices
        f = lambda t: np.exp(-0.5 * t**2 / self.sigma**2) / np.sqrt(2 * np.pi * self.sigma**2)
        mass, _ = integrate.quad(f, -np.inf, np.inf, epsabs=1e-12)
        return abs(mass**self.dim - 1.0)

    def describe(self):
        return {**super().describe(), "sigma": self.sigma}


class PoissonRate(DistributionFamily):
    """Poisson family in the rate parameterization ``phi = lambda``."""

    name = "poisson_rate"

    def __init__(self, param_space: Optional[ParamSpace] = None):
        ps = param_space or ParamSpace.box([0.05], [5.0])
        if ps.dim != 1 or np.any(ps.lower <= 0):
            raise InvalidParameterError("Poisson rates must be positive scalars")
        self.param_space = ps
        self.check_normalization()

    def sample(self, phi, n, rng):
        return _gen(rng).poisson(phi[0], n).astype(float)

    def logpdf(self, z, phi):
        lam = np.asarray(phi, dtype=float)[..., 0]
        z = np.asarray(z, dtype=float)
        return special.xlogy(z, lam) - lam - special.gammaln(z + 1.0)

    def mle(self, samples):
        return np.array([np.mean(samples)])

    def mle_draws(self, phi, n, size, rng):
        return (_gen(rng).poisson(n * phi[0], size) / n)[:, None]

    def kl(self, phi1, phi2):
        a = np.asarray(phi1, dtype=float)[..., 0]
        b = np.asarray(phi2, dtype=float)[..., 0]
        with np.errstate(divide="ignore"):
            return b - a + special.xlogy(a, a) - special.xlogy(a, b)

    def natural(self, phi):
        return np.log(np.asarray(phi, dtype=float))

    def mean_param(self, eta):
        return np.exp(np.asarray(eta, dtype=float))

    def sufficient_stat(self, z):
        return np.asarray(z, dtype=float)

    def log_partition(self, eta):
        return np.exp(np.asarray(eta, dtype=float)[..., 0])

    def log_partition_grad(self, eta):
        return np.exp(np.asarray(eta, dtype=float))

    def log_partition_hess(self, eta):
        return np.exp(np.asarray(eta, dtype=float)[..., 0])

    def base_measure(self, z):
        return -special.gammaln(np.asarray(z, dtype=float) + 1.0)

    def support_max(self, lam: float) -> int:
        return int(stats.poisson.isf(1e-16, lam)) + 10

    def normalization_error(self, phi):
        z = np.arange(self.support_max(float(phi[0])) + 1, dtype=float)
        return abs(float(np.sum(np.exp(self.logpdf(z, phi)))) - 1.0)


class UniformExp(DistributionFamily):
    """Uniform on ``[0, exp(c * phi)]``.

    ``kl`` follows the closed form ``exp(c (phi2 - phi1)) * c (phi2 - phi1)``
    used in the convex-KL construction this family exists for.  It is not the
    textbook divergence between two uniforms (``c (phi2 - phi1)`` when the
    first support is inside the second, infinite otherwise) and it is negative
    for ``phi2 < phi1``; see :meth:`textbook_kl`.
    """

    name = "uniform_exp"

    def __init__(self, param_space: Optional[ParamSpace] = None, c: float = 1.0):
        self.param_space = param_space or ParamSpace.box([0.0], [1.0])
        if self.param_space.dim != 1:
            raise InvalidParameterError("uniform_exp is one-dimensional")
        if c <= 0:
            raise InvalidParameterError("c must be positive")
        self.c = float(c)
        self.check_normalization()

    @property
    def is_exponential_family(self) -> bool:
        return False

    def upper(self, phi) -> float:
        return float(np.exp(self.c * phi[0]))

    def sample(self, phi, n, rng):
        return _gen(rng).random(n) * self.upper(phi)

    def logpdf(self, z, phi):
        phi0 = np.asarray(phi, dtype=float)[..., 0]
        z = np.asarray(z, dtype=float)
        inside = (z >= 0) & (z <= np.exp(self.c * phi0))
        return np.where(inside, -self.c * phi0, -np.inf)

    def mle(self, samples):
        return np.array([np.log(np.max(samples)) / self.c])

    def mle_draws(self, phi, n, size, rng):
        # max of n uniforms on [0, b] is b * V**(1/n)
        v = _gen(rng).random(size)
        return (phi[0] + np.log(v) / (self.c * n))[:, None]

    def kl(self, phi1, phi2):
        x = np.asarray(phi2, dtype=float)[..., 0] - np.asarray(phi1, dtype=float)[..., 0]
        return np.exp(self.c * x) * self.c * x

    def textbook_kl(self, phi1, phi2):
        x = np.asarray(phi2, dtype=float)[..., 0] - np.asarray(phi1, dtype=float)[..., 0]
        return np.where(x >= 0, self.c * x, np.inf)

    def normalization_error(self, phi):
        b = self.upper(phi)
        mass, _ = integrate.quad(lambda t: np.exp(self.logpdf(t, phi)), 0.0, b)
        return abs(mass - 1.0)

    def describe(self):
        return {**super().describe(), "c": self.c}


def make_family(name: str, **params) -> DistributionFamily:
    space = params.pop("param_space", None)
    if isinstance(space, dict):
        space = ParamSpace(space["kind"], space["center"], space["extent"])
    elif isinstance(space, (list, tuple)):
        space = ParamSpace.box(space[0], space[1])
    classes = {
        "bernoulli_label": Bernoulli,
        "gaussian_mean": GaussianMean,
        "poisson_rate": PoissonRate,
        "uniform_exp": UniformExp,
    }
    if name not in classes:
        raise ConfigError(f"unknown family {name!r}; choose from {sorted(classes)}")
    return classes[name](space, **params)


# ---------------------------------------------------------------------------
# Distribution maps and losses
# ---------------------------------------------------------------------------


@dataclass
class DistributionMap:
    """Hidden map from model parameters to distribution parameters.

    ``square``      phi = theta**2 (one-dimensional, theta in [0, 1])
    ``affine``      phi = offset + matrix @ theta
    ``exp_convex``  phi = exp(a + b . theta) (scalar output, convex in theta)
    """

    kind: str
    offset: np.ndarray = field(default_factory=lambda: np.zeros(1))
    matrix: np.ndarray = field(default_factory=lambda: np.eye(1))
    a: float = 0.0
    b: np.ndarray = field(default_factory=lambda: np.ones(1))

    def __post_init__(self):
        if self.kind not in ("square", "affine", "exp_convex"):
            raise ConfigError(f"unknown map kind {self.kind!r}")
        self.offset = as_vector(self.offset)
        self.matrix = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        self.b = as_vector(self.b)

    @property
    def is_scalar(self) -> bool:
        if self.kind == "square":
            return True
        if self.kind == "exp_convex":
            return self.b.size == 1
        return self.matrix.shape == (1, 1)

    def out_dim(self, d_theta: int) -> int:
        if self.kind == "affine":
            return self.matrix.shape[0]
        return 1

    def __call__(self, theta: np.ndarray) -> np.ndarray:
        if self.kind == "square":
            return theta * theta
        if self.kind == "affine":
            return self.offset + self.matrix @ theta
        return np.array([np.exp(self.a + self.b @ theta)])

    def many(self, thetas: np.ndarray) -> np.ndarray:
        """Vectorized evaluation; ``thetas`` has shape (m, d_theta)."""
        if self.kind == "square":
            return thetas * thetas
        if self.kind == "affine":
            return self.offset + thetas @ self.matrix.T
        return np.exp(self.a + thetas @ self.b)[:, None]

    def derivative(self, theta) -> float:
        """d phi / d theta for scalar maps."""
        t = float(np.asarray(theta).reshape(-1)[0])
        if not self.is_scalar:
            raise UnsupportedError("derivative is defined for scalar maps only")
        if self.kind == "square":
            return 2.0 * t
        if self.kind == "affine":
            return float(self.matrix[0, 0])
        return float(self.b[0] * np.exp(self.a + self.b[0] * t))

    def inverse(self, phi) -> np.ndarray:
        """Preimage of ``phi`` for strictly monotone scalar maps."""
        p = np.asarray(phi, dtype=float)
        if not self.is_scalar:
            raise UnsupportedError("inverse is defined for scalar maps only")
        if self.kind == "square":
            return np.sqrt(p)
        if self.kind == "affine":
            m = self.matrix[0, 0]
            if m == 0:
                raise UnsupportedError("constant map has no inverse")
            return (p - self.offset[0]) / m
        if self.b[0] == 0:
            raise UnsupportedError("constant map has no inverse")
        return (np.log(p) - self.a) / self.b[0]

    def describe(self) -> dict:
        if self.kind == "square":
            return {"kind": "square"}
        if self.kind == "affine":
            return {"kind": "affine", "offset": self.offset.tolist(), "matrix": self.matrix.tolist()}
        return {"kind": "exp_convex", "a": self.a, "b": self.b.tolist()}


@dataclass
class LossSpec:
    """Raw loss before normalization.

    ``squared_label``       sign * (theta * x - y)**2 for Bernoulli labels y
    ``quadratic_location``  scale * ||z - (k * theta + offset)||**2, capped at ``clip``
    """

    kind: str
    sign: int = 1
    x: float = 1.0
    k: float = 1.0
    offset: float | list = 0.0
    scale: float = 1.0
    clip: Optional[float] = None
    normalize: bool = True

    def __post_init__(self):
        if self.kind not in ("squared_label", "quadratic_location"):
            raise ConfigError(f"unknown loss kind {self.kind!r}")
        if self.sign not in (1, -1):
            raise ConfigError("loss sign must be +1 or -1")
        if self.clip is not None and self.clip <= 0:
            raise ConfigError("clip must be positive")
        self.offset = np.asarray(self.offset, dtype=float)

    def location(self, theta: np.ndarray) -> np.ndarray:
        return self.k * theta + self.offset

    def raw(self, z, theta) -> np.ndarray:
        if self.kind == "squared_label":
            return self.sign * (theta[0] * self.x - z) ** 2
        diff = z - self.location(theta) if np.ndim(z) > 1 else z - self.location(theta)[0]
        sq = np.sum(diff**2, axis=-1) if np.ndim(z) > 1 else diff**2
        val = self.scale * sq
        if self.clip is not None:
            val = np.minimum(val, self.clip)
        return val

    def raw_grad_theta(self, z, theta) -> np.ndarray:
        """d raw / d theta for one-dimensional theta and scalar z."""
        t = theta[0]
        z = np.asarray(z, dtype=float)
        if self.kind == "squared_label":
            return self.sign * 2.0 * (t * self.x - z) * self.x
        resid = z - (self.k * t + float(np.reshape(self.offset, -1)[0]))
        grad = -2.0 * self.scale * self.k * resid
        if self.clip is not None:
            grad = np.where(self.scale * resid**2 >= self.clip, 0.0, grad)
        return grad

    def describe(self) -> dict:
        d = {"kind": self.kind, "normalize": self.normalize}
        if self.kind == "squared_label":
            d.update(sign=self.sign, x=self.x)
        else:
            d.update(k=self.k, offset=self.offset.tolist(), scale=self.scale, clip=self.clip)
        return d


# ---------------------------------------------------------------------------
# Environment
# ---------------------------------------------------------------------------


@dataclass
class OracleReport:
    theta_opt: np.ndarray
    phi_opt: np.ndarray
    pr_opt: float
    grid_resolution: float
    grid_points: int = 0

    def to_dict(self) -> dict:
        return {
            "theta_opt": self.theta_opt.tolist(),
            "phi_opt": self.phi_opt.tolist(),
            "pr_opt": self.pr_opt,
            "grid_resolution": self.grid_resolution,
            "grid_points": self.grid_points,
        }


class Environment:
    """A performative world: family, hidden map, loss and model space."""

    def __init__(
        self,
        family: DistributionFamily,
        dist_map: DistributionMap,
        loss: LossSpec,
        theta_space: ParamSpace,
        F: float = 1.0,
        name: str = "custom",
    ):
        if F <= 0:
            raise ConfigError("loss bound F must be positive")
        self.family = family
        self._map = dist_map
        self.loss_spec = loss
        self.theta_space = theta_space
        self.F = float(F)
        self.name = name
        self.sample_counter = 0
        if dist_map.kind == "square":
            if theta_space.dim != 1 or family.dim != 1:
                raise ConfigError("square map needs one-dimensional theta and phi")
            if theta_space.lower[0] < 0 or theta_space.upper[0] > 1:
                raise ConfigError("square map needs theta space inside [0, 1]")
        if dist_map.kind == "affine" and dist_map.matrix.shape != (family.dim, theta_space.dim):
            raise ConfigError(
                f"affine matrix shape {dist_map.matrix.shape} does not match "
                f"(d_phi, d_theta) = ({family.dim}, {theta_space.dim})"
            )
        self._check_map_range()
        self._raw_lo, self._raw_hi = self._raw_range()

    # -- construction helpers --------------------------------------------

    def _extreme_thetas(self) -> np.ndarray:
        ts = self.theta_space
        if ts.kind == "box":
            corners = list(itertools.product(*zip(ts.lower, ts.upper)))
            return np.array(corners, dtype=float)
        eye = np.eye(ts.dim)
        return np.vstack([ts.center + ts.extent * eye, ts.center - ts.extent * eye, ts.center])

    def _check_map_range(self) -> None:
        pts = [self._extreme_thetas()]
        gen = np.random.default_rng(0)
        ts = self.theta_space
        rand = ts.center + (gen.random((64, ts.dim)) * 2 - 1) * ts.scale
        pts.append(rand)
        for theta in np.vstack(pts):
            phi = self._map(theta)
            if not self.family.param_space.contains(phi, tol=1e-12):
                raise ConfigError(
                    f"map sends theta={theta.tolist()} to phi={phi.tolist()}, "
                    "outside the family parameter space"
                )

    def _raw_range(self) -> tuple[float, float]:
        spec = self.loss_spec
        if spec.kind == "squared_label":
            if self.family.name != "bernoulli_label" or self.theta_space.dim != 1:
                raise ConfigError("squared_label needs Bernoulli labels and scalar theta")
            t = np.array([self.theta_space.lower[0], self.theta_space.upper[0]]) * spec.x
            m = float(max(np.max(t**2), np.max((t - 1.0) ** 2)))
            return (0.0, m) if spec.sign > 0 else (-m, 0.0)
        if spec.clip is not None:
            return 0.0, float(spec.clip)
        corners = self._extreme_thetas()
        fam = self.family
        if fam.name == "bernoulli_label":
            zs = [0.0, 1.0]
        elif fam.name == "uniform_exp":
            zs = [0.0, float(np.exp(fam.c * fam.param_space.upper[0]))]
        else:
            raise ConfigError(f"quadratic loss on {fam.name} is unbounded; set clip")
        m = 0.0
        for th in corners:
            for z in zs:
                loc = spec.location(th)
                m = max(m, float(spec.scale * np.sum((z - loc) ** 2)))
        return 0.0, m

    # -- public surface ----------------------------------------------------

    @property
    def d_theta(self) -> int:
        return self.theta_space.dim

    @property
    def d_phi(self) -> int:
        return self.family.dim

    @property
    def map_kind(self) -> str:
        return self._map.kind

    def check_theta(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float).reshape(-1)
        ts = self.theta_space
        if theta.size != ts.dim:
            raise InvalidDimensionError(f"theta has dimension {theta.size}, expected {ts.dim}")
        if ts.contains(theta):
            return theta
        if ts.contains(theta, tol=DEPLOY_TOL):
            from .core_math import project

            return project(ts, theta)
        raise InfeasibleModelError(f"theta={theta.tolist()} lies outside the model space")

    def deploy(self, theta, n: int, rng) -> np.ndarray:
        """Deploy ``theta`` and observe ``n`` i.i.d. samples from its induced distribution."""
        if n < 1:
            raise InvalidParameterError("n must be at least 1")
        theta = self.check_theta(theta)
        phi = self._map(theta)
        z = self.family.sample(phi, n, rng)
        self.sample_counter += n
        return z

    def normalize(self, raw):
        if not self.loss_spec.normalize:
            return raw
        width = self._raw_hi - self._raw_lo
        if width <= 0:
            return np.zeros_like(raw) if np.ndim(raw) else 0.0
        return self.F * (raw - self._raw_lo) / width

    @property
    def normalization(self) -> tuple[float, float]:
        """(slope, intercept) of the affine map from raw to normalized loss."""
        if not self.loss_spec.normalize:
            return 1.0, 0.0
        width = self._raw_hi - self._raw_lo
        if width <= 0:
            return 0.0, 0.0
        return self.F / width, -self.F * self._raw_lo / width

    def loss(self, z, theta):
        """Normalized loss of sample(s) ``z`` under model ``theta``.

        A single sample gives a float, a batch gives an array.
        """
        theta = self.check_theta(theta)
        z = np.asarray(z, dtype=float)
        single = z.ndim == len(self.family.event_shape)
        if single:
            z = z[None, ...]
        val = self.normalize(self.loss_spec.raw(z, theta))
        lo, hi = float(np.min(val)), float(np.max(val))
        if lo < -1e-12 or hi > self.F + 1e-12:
            raise LossBoundError(f"loss range [{lo}, {hi}] escapes [0, {self.F}]")
        return float(val[0]) if single else val

    def phi_of(self, theta) -> np.ndarray:
        """Hidden distribution parameter of ``theta`` (oracle access)."""
        return self._map(self.check_theta(theta))

    def map_derivative(self, theta) -> float:
        return self._map.derivative(self.check_theta(theta))

    def theta_for_phi(self, phi) -> np.ndarray:
        """Model inducing ``phi`` for invertible scalar maps (oracle access)."""
        return np.atleast_1d(self._map.inverse(phi))

    def pr_dagger(self, phi) -> float:
        """Reparameterized risk at ``phi``: the risk of the model that induces it."""
        theta = self.theta_for_phi(np.asarray(phi, dtype=float).reshape(-1))
        return self.true_pr(theta)

    def true_pr(self, theta) -> float:
        """Exact performative risk of ``theta`` (oracle access)."""
        theta = self.check_theta(theta)
        return float(self.true_pr_many(theta[None, :])[0])

    def true_pr_many(self, thetas) -> np.ndarray:
        """Exact normalized risk of each row of ``thetas``."""
        return self.normalize(self.raw_pr_many(thetas))

    def raw_pr_many(self, thetas) -> np.ndarray:
        """Exact risk of each row of ``thetas`` under the raw (unnormalized) loss."""
        thetas = np.asarray(thetas, dtype=float).reshape(-1, self.d_theta)
        fam = self.family.name
        spec = self.loss_spec
        phis = self._map.many(thetas)
        if fam == "bernoulli_label":
            p = phis[:, 0]
            if spec.kind == "squared_label":
                l1 = spec.sign * (thetas[:, 0] * spec.x - 1.0) ** 2
                l0 = spec.sign * (thetas[:, 0] * spec.x) ** 2
            else:
                loc = spec.k * thetas[:, 0] + float(np.reshape(spec.offset, -1)[0])
                l1 = spec.scale * (1.0 - loc) ** 2
                l0 = spec.scale * loc**2
                if spec.clip is not None:
                    l1, l0 = np.minimum(l1, spec.clip), np.minimum(l0, spec.clip)
            return p * l1 + (1.0 - p) * l0
        if spec.kind != "quadratic_location":
            raise OracleUnsupportedError(f"no risk oracle for {spec.kind} on {fam}")
        if fam == "poisson_rate":
            lam_max = float(np.max(phis[:, 0]))
            z = np.arange(self.family.support_max(lam_max) + 1, dtype=float)
            out = np.empty(len(thetas))
            for i, (th, phi) in enumerate(zip(thetas, phis)):
                pmf = stats.poisson.pmf(z, phi[0])
                out[i] = float(np.sum(pmf * spec.raw(z, th)))
            return out
        if fam == "gaussian_mean":
            return np.array([self._gaussian_pr(th, ph) for th, ph in zip(thetas, phis)])
        if fam == "uniform_exp":
            return np.array([self._uniform_pr(th, ph) for th, ph in zip(thetas, phis)])
        raise OracleUnsupportedError(f"no risk oracle for family {fam}")

    def _gaussian_pr(self, theta, phi) -> float:
        spec = self.loss_spec
        sigma2 = self.family.sigma**2
        d = self.family.dim
        loc = spec.location(theta) * np.ones(d)
        nc = float(np.sum((phi - loc) ** 2)) / sigma2
        if spec.clip is None:
            return spec.scale * (d * sigma2 + nc * sigma2)
        if spec.scale == 0:
            return 0.0
        # E[min(s * sigma2 * W, clip)] with W noncentral chi-square
        unit = spec.scale * sigma2
        upper = spec.clip / unit
        sf = (lambda w: stats.chi2.sf(w, d)) if nc == 0 else (lambda w: stats.ncx2.sf(w, d, nc))
        val, err, *_ = integrate.quad(sf, 0.0, upper, epsabs=1e-11, epsrel=1e-11, limit=200, full_output=1)
        if not err * unit <= QUAD_TOL:
            raise OracleFailureError(f"Gaussian risk quadrature error {err * unit:g}")
        return unit * val

    def _uniform_pr(self, theta, phi) -> float:
        spec = self.loss_spec
        b = self.family.upper(phi)
        m = float(spec.location(theta)[0])
        if spec.clip is None:
            return spec.scale * (b * b / 12.0 + (b / 2.0 - m) ** 2)
        if spec.scale == 0:
            return 0.0
        # on [lo, hi] the loss is below the cap; outside it equals clip
        half = np.sqrt(spec.clip / spec.scale)
        lo, hi = max(0.0, m - half), min(b, m + half)
        if hi <= lo:
            return float(spec.clip)
        f = lambda t: spec.scale * (t - m) ** 2
        inner, err = integrate.quad(f, lo, hi, epsabs=1e-12)
        if not err / b <= QUAD_TOL:
            raise OracleFailureError(f"uniform risk quadrature error {err / b:g}")
        return (inner + spec.clip * (b - (hi - lo))) / b

    def describe(self) -> dict:
        return {
            "name": self.name,
            "family": self.family.describe(),
            "map": self._map.describe(),
            "loss": self.loss_spec.describe(),
            "theta_space": self.theta_space.to_dict(),
            "F": self.F,
        }


# ---------------------------------------------------------------------------
# Oracles
# ---------------------------------------------------------------------------


def theta_grid(space: ParamSpace, resolution: float) -> np.ndarray:
    """Lexicographically ordered grid over ``space`` with the given spacing."""
    if resolution <= 0:
        raise InvalidParameterError("grid resolution must be positive")
    axes = []
    for lo, hi in zip(space.lower, space.upper):
        num = int(round((hi - lo) / resolution)) + 1
        axes.append(np.linspace(lo, hi, max(num, 2)))
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.reshape(-1) for m in mesh], axis=1)
    if space.kind == "ball":
        keep = np.linalg.norm(pts - space.center, axis=1) <= space.extent + 1e-12
        pts = pts[keep]
    return pts


def brute_force_opt(env: Environment, grid_resolution: float, tie_tol: float = 1e-12) -> OracleReport:
    """Grid-search the performative optimum; ties go to the lexicographically smallest point."""
    if env.d_theta > 3:
        raise OracleUnsupportedError("grid search oracle supports d_theta <= 3")
    pts = theta_grid(env.theta_space, grid_resolution)
    values = env.true_pr_many(pts)
    best = float(np.min(values))
    idx = int(np.flatnonzero(values <= best + tie_tol)[0])
    theta = pts[idx]
    return OracleReport(
        theta_opt=theta,
        phi_opt=env.phi_of(theta),
        pr_opt=float(values[idx]),
        grid_resolution=float(grid_resolution),
        grid_points=len(pts),
    )


# ---------------------------------------------------------------------------
# Catalog
# ---------------------------------------------------------------------------


def _bernoulli_square(sign=1, x=1.0, normalize=True, F=1.0):
    return Environment(
        Bernoulli(),
        DistributionMap("square"),
        LossSpec("squared_label", sign=int(sign), x=float(x), normalize=bool(normalize)),
        ParamSpace.box([0.0], [1.0]),
        F=F,
        name="bernoulli_square",
    )


def _gaussian_affine(dim=1, sigma=1.0, phi0=None, matrix=None, theta_lower=-1.0, theta_upper=1.0,
                     phi_lower=-2.0, phi_upper=2.0, k=1.0, offset=0.0, scale=1.0, clip=25.0, F=1.0):
    phi0 = np.zeros(dim) if phi0 is None else phi0
    matrix = np.eye(dim) if matrix is None else matrix
    return Environment(
        GaussianMean(ParamSpace.box(np.full(dim, phi_lower), np.full(dim, phi_upper)), sigma=sigma),
        DistributionMap("affine", offset=phi0, matrix=matrix),
        LossSpec("quadratic_location", k=k, offset=offset, scale=scale, clip=clip),
        ParamSpace.box(np.full(dim, theta_lower), np.full(dim, theta_upper)),
        F=F,
        name="gaussian_affine",
    )


def _poisson_exp(a=0.5, b=-1.0, k=3.0, offset=0.0, scale=1.0, clip=100.0, theta_lower=0.0,
                 theta_upper=1.0, rate_lower=0.05, rate_upper=5.0, F=1.0):
    return Environment(
        PoissonRate(ParamSpace.box([rate_lower], [rate_upper])),
        DistributionMap("exp_convex", a=a, b=[b]),
        LossSpec("quadratic_location", k=k, offset=offset, scale=scale, clip=clip),
        ParamSpace.box([theta_lower], [theta_upper]),
        F=F,
        name="poisson_exp",
    )


def _uniform_exp(c=40.0, phi0=0.0, slope=1.0, theta_lower=0.0, theta_upper=0.3, phi_lower=0.0,
                 phi_upper=0.3, k=1.0, offset=0.0, scale=1.0, clip=1.0, F=1.0):
    return Environment(
        UniformExp(ParamSpace.box([phi_lower], [phi_upper]), c=c),
        DistributionMap("affine", offset=[phi0], matrix=[[slope]]),
        LossSpec("quadratic_location", k=k, offset=offset, scale=scale, clip=clip),
        ParamSpace.box([theta_lower], [theta_upper]),
        F=F,
        name="uniform_exp",
    )


def _convex_quadratic(target=0.3, theta_lower=0.0, theta_upper=1.0, F=1.0):
    # z is identically 0, so the loss is (theta - target)**2 and the map is constant
    return Environment(
        Bernoulli(),
        DistributionMap("affine", offset=[0.0], matrix=[[0.0]]),
        LossSpec("quadratic_location", k=1.0, offset=-float(target), normalize=False),
        ParamSpace.box([theta_lower], [theta_upper]),
        F=F,
        name="convex_quadratic",
    )


ENVIRONMENTS = {
    "bernoulli_square": _bernoulli_square,
    "gaussian_affine": _gaussian_affine,
    "poisson_exp": _poisson_exp,
    "uniform_exp": _uniform_exp,
    "convex_quadratic": _convex_quadratic,
}


def make_environment(name: str, **params) -> Environment:
    """Build a catalog environment by name with keyword overrides."""
    if name not in ENVIRONMENTS:
        raise ConfigError(f"unknown environment {name!r}; choose from {sorted(ENVIRONMENTS)}")
    try:
        return ENVIRONMENTS[name](**params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for {name}: {exc}") from None
