import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from perfzo.core_math import ParamSpace, SeededRng
from perfzo.environments import (
    Bernoulli,
    DistributionMap,
    Environment,
    GaussianMean,
    LossSpec,
    PoissonRate,
    UniformExp,
    brute_force_opt,
    make_environment,
    make_family,
    theta_grid,
)
from perfzo.errors import (
    ConfigError,
    InfeasibleModelError,
    InvalidParameterError,
    OracleUnsupportedError,
)
from perfzo.harness import diag_convexity


def rng(seed=0):
    return SeededRng(seed).generator


# -- families -------------------------------------------------------------------


@pytest.mark.parametrize(
    "family",
    [Bernoulli(), GaussianMean(), PoissonRate(), UniformExp(c=3.0)],
    ids=lambda f: f.name,
)
def test_family_normalizes(family):
    for phi in np.linspace(family.param_space.lower, family.param_space.upper, 7):
        assert family.normalization_error(phi) < 1e-6


@pytest.mark.parametrize("family", [Bernoulli(), GaussianMean(sigma=1.5), PoissonRate()], ids=lambda f: f.name)
def test_exponential_family_form_holds_pointwise(family):
    gen = rng(3)
    for phi in np.linspace(family.param_space.lower + 0.05, family.param_space.upper - 0.05, 5):
        z = family.sample(phi, 50, gen)
        eta = family.natural(phi)
        stat = family.sufficient_stat(z)
        expfam = np.sum(np.atleast_2d(stat.T).T * eta, axis=-1) if stat.ndim > 1 else stat * eta[0]
        expfam = expfam - family.log_partition(eta) + family.base_measure(z)
        np.testing.assert_allclose(family.logpdf(z, phi), expfam, atol=1e-10)


def test_poisson_partition_curvature_matches_variance():
    fam = PoissonRate()
    # exact identity over the whole range
    for lam in np.linspace(0.1, 4.9, 5):
        z = np.arange(fam.support_max(lam) + 1, dtype=float)
        pmf = np.exp(fam.logpdf(z, [lam]))
        var = float(np.sum(pmf * z**2) - np.sum(pmf * z) ** 2)
        assert fam.log_partition_hess(fam.natural([lam])) == pytest.approx(var, abs=1e-9)
    # Monte Carlo, 10**6 draws, at rates where the estimator's standard error is well below 1e-3
    gen = rng(4)
    for lam in (0.05, 0.06, 0.08, 0.1, 0.12):
        z = fam.sample([lam], 10**6, gen)
        assert abs(fam.log_partition_hess(fam.natural([lam])) - z.var()) <= 1e-3


def test_bernoulli_deploy_degenerate_and_mean():
    env = make_environment("bernoulli_square")
    assert np.all(env.deploy([1.0], 100, rng()) == 1)
    assert np.all(env.deploy([0.0], 100, rng()) == 0)
    z = env.deploy([0.5], 10**5, rng(1))
    assert abs(z.mean() - 0.25) <= 0.005
    assert env.sample_counter == 100 + 100 + 10**5


@settings(max_examples=30)
@given(ns=st.lists(st.integers(1, 50), min_size=1, max_size=10))
def test_sample_counter_is_exact(ns):
    env = make_environment("poisson_exp")
    gen = rng(0)
    for n in ns:
        env.deploy([0.3], n, gen)
    assert env.sample_counter == sum(ns)


def test_deploy_tolerance_and_infeasible():
    env = make_environment("bernoulli_square")
    env.deploy([1.0 + 5e-10], 1, rng())
    with pytest.raises(InfeasibleModelError):
        env.deploy([1.0 + 1e-6], 1, rng())
    with pytest.raises(InvalidParameterError):
        env.deploy([0.5], 0, rng())


def test_bernoulli_losses():
    env = make_environment("bernoulli_square", normalize=False)
    assert env.loss_spec.raw(np.array([1.0]), np.array([1.0]))[0] == 0.0
    assert env.loss_spec.raw(np.array([1.0]), np.array([0.0]))[0] == 1.0
    # raw range already [0, 1] with F = 1: normalization is the identity
    normed = make_environment("bernoulli_square")
    assert normed.normalization == (1.0, 0.0)
    assert normed.loss(1.0, [0.3]) == pytest.approx((0.3 - 1.0) ** 2)


def test_bernoulli_true_pr_examples():
    env = make_environment("bernoulli_square", normalize=False)
    assert env.true_pr([0.0]) == 0.0
    assert env.true_pr([1.0]) == 0.0
    assert env.true_pr([0.5]) == pytest.approx(0.25 * 0.25 + 0.75 * 0.25)


def test_negative_sign_normalization_flips_into_unit_interval():
    env = make_environment("bernoulli_square", sign=-1)
    slope, intercept = env.normalization
    assert (slope, intercept) == (1.0, 1.0)
    z = env.deploy([0.7], 1000, rng())
    losses = env.loss(z, [0.7])
    assert losses.min() >= 0 and losses.max() <= 1


@pytest.mark.parametrize(
    "name,params,thetas",
    [
        ("bernoulli_square", {}, [0.2, 0.7]),
        ("bernoulli_square", {"sign": -1}, [0.4]),
        ("gaussian_affine", {}, [-0.5, 0.8]),
        ("poisson_exp", {}, [0.1, 0.9]),
        ("uniform_exp", {}, [0.05, 0.25]),
        ("uniform_exp", {"c": 2.0, "theta_upper": 1.0, "phi_upper": 1.0, "clip": None}, [0.5]),
    ],
)
def test_true_pr_matches_monte_carlo(name, params, thetas):
    env = make_environment(name, **params)
    gen = rng(5)
    n = 10**6
    for th in thetas:
        z = env.deploy([th], n, gen)
        mean = float(np.mean(env.loss(z, [th])))
        assert abs(mean - env.true_pr([th])) <= 4 * env.F / np.sqrt(n)


def test_gaussian_flat_risk_and_tie_break():
    env = make_environment("gaussian_affine")
    raw = env.raw_pr_many(np.linspace(-1, 1, 9)[:, None])
    # clipping at 25 removes only the far tail of a chi-square(1)
    np.testing.assert_allclose(raw, 1.0, atol=1e-5)
    assert np.ptp(raw) < 1e-12
    rep = brute_force_opt(env, 0.01)
    assert rep.theta_opt.tolist() == [-1.0]


def test_oracle_bernoulli_positive_sign():
    env = make_environment("bernoulli_square")
    rep = brute_force_opt(env, 1e-5)
    assert rep.theta_opt.tolist() == [0.0]
    assert rep.pr_opt == 0.0
    assert rep.grid_points == 100001


def test_oracle_refuses_high_dimension():
    env = make_environment("gaussian_affine", dim=4)
    with pytest.raises(OracleUnsupportedError):
        brute_force_opt(env, 0.5)


def test_oracle_pr_opt_is_grid_minimum():
    env = make_environment("poisson_exp")
    rep = brute_force_opt(env, 1e-3)
    grid = theta_grid(env.theta_space, 1e-3)
    assert rep.pr_opt <= env.true_pr_many(grid).min() + 1e-12


def test_phi_of_examples():
    env = make_environment("bernoulli_square")
    assert env.phi_of([0.5]).tolist() == [0.25]
    assert env.phi_of([1.0]).tolist() == [1.0]
    fam = GaussianMean(ParamSpace.box([-3, -3], [3, 3]))
    aff = Environment(
        fam,
        DistributionMap("affine", offset=[1.0, 0.0], matrix=np.eye(2)),
        LossSpec("quadratic_location", clip=10.0),
        ParamSpace.box([-1, -1], [1, 1]),
    )
    assert aff.phi_of([0.0, 1.0]).tolist() == [1.0, 1.0]


def test_environment_validation():
    with pytest.raises(ConfigError):
        Environment(Bernoulli(), DistributionMap("square"), LossSpec("squared_label"), ParamSpace.box([0], [2]))
    with pytest.raises(ConfigError):
        # map leaves the distribution space
        make_environment("gaussian_affine", theta_lower=-3.0, theta_upper=3.0)
    with pytest.raises(ConfigError):
        # unbounded Gaussian loss cannot be normalized
        make_environment("gaussian_affine", clip=None)
    with pytest.raises(ConfigError):
        make_environment("nope")
    with pytest.raises(ConfigError):
        make_family("nope")


def test_map_derivative_and_inverse():
    m = DistributionMap("exp_convex", a=0.5, b=[-1.0])
    assert m.derivative([0.2]) == pytest.approx(-np.exp(0.3))
    assert m.inverse(np.exp(0.3)) == pytest.approx(0.2)
    sq = DistributionMap("square")
    assert sq.derivative([0.5]) == 1.0 and sq.inverse(0.49) == pytest.approx(0.7)


def test_bernoulli_convexity_in_phi_for_several_x():
    for x in (0.25, 0.5, 1.0):
        env = make_environment("bernoulli_square", sign=-1, x=x)
        rep = diag_convexity(env, "phi", 0.01)
        assert rep.grid[0] == pytest.approx(0.01) and rep.grid[-1] == pytest.approx(0.99)
        assert rep.convex, (x, rep.min_second_diff)


def test_bernoulli_nonconvex_in_theta_with_negative_sign():
    rep = diag_convexity(make_environment("bernoulli_square", sign=-1), "theta", 0.01)
    assert not rep.convex
    assert rep.min_second_diff < 0
    # PR = -2 theta^2 + 2 theta^3 is concave below theta = 1/3
    assert rep.witness < 1 / 3


def test_uniform_exp_kl_is_the_closed_form_used_by_the_optimizer():
    fam = UniformExp(c=2.0)
    a, b = np.array([0.2]), np.array([0.5])
    assert fam.kl(a, b) == pytest.approx(np.exp(2 * 0.3) * 2 * 0.3)
    # the textbook divergence of nested uniforms
    assert fam.textbook_kl(a, b) == pytest.approx(2 * 0.3)
    assert np.isinf(fam.textbook_kl(b, a))
