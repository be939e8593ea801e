import warnings

import numpy as np
import pytest
from scipy.special import polygamma

from mile.core import ContinuousBox, GroupedDataset, IdealLikelihoodProblem, Interval, ParamDomain
from mile.inference import (
    InferenceError, InformationBlocks, SingularBlockError, StationarityWarning, conditional_param_cov,
    jackknife_cov, loewner_geq, observed_information,
)
from mile.models import BetaBernoulliProblem, bb_fit_mile
from conftest import dataset, simulated


def random_spd(gen, n):
    A = gen.standard_normal((n, n))
    return A @ A.T + n * np.eye(n)


class QuadraticProblem(IdealLikelihoodProblem):
    def param_domain(self, data):
        return ParamDomain(("theta",), (Interval(),))

    def latent_space(self, data):
        return ContinuousBox.uniform(1, -10.0, 10.0)

    def log_ideal_likelihood(self, theta, z, data):
        return float(-0.5 * (theta[0] ** 2 + z[0] ** 2))


class QuadraticWithGradients(QuadraticProblem):
    def grad_theta(self, theta, z, data):
        return -np.asarray(theta, dtype=float)

    def grad_z(self, theta, z, data):
        return -np.asarray(z, dtype=float)


def bb_analytic_hessian(theta, z, data):
    s, M, N = data.row_sums, data.obs_per_individual, data.n_individuals
    H = np.zeros((N + 1, N + 1))
    H[0, 0] = N * (4 * polygamma(1, 2 * theta) - 2 * polygamma(1, theta))
    H[0, 1:] = H[1:, 0] = 1 / z - 1 / (1 - z)
    H[1:, 1:] = np.diag(-(theta + s - 1) / z**2 - (theta - s + M - 1) / (1 - z) ** 2)
    return H


def test_bb_single_point_latent_block():
    data = GroupedDataset(np.array([[1.0, 0.0]]))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", StationarityWarning)
        blocks = observed_information(BetaBernoulliProblem(), [1.0], [0.5], data)
    assert blocks.I22[0, 0] == pytest.approx(8.0, rel=1e-6)


@pytest.mark.parametrize("problem", [QuadraticProblem(), QuadraticWithGradients()])
def test_quadratic_blocks(problem):
    blocks = observed_information(problem, [0.0], [0.0], dataset([[0.0]]))
    assert blocks.I11[0, 0] == pytest.approx(1.0, rel=1e-6)
    assert blocks.I22[0, 0] == pytest.approx(1.0, rel=1e-6)
    assert blocks.I12[0, 0] == pytest.approx(0.0, abs=1e-6)


def test_bb_matches_analytic_hessian():
    data, _ = simulated("beta-bernoulli", 8, 40, seed=1)
    gen = np.random.default_rng(1)
    for _ in range(5):
        theta = gen.uniform(1, 10)
        z = gen.uniform(0.1, 0.9, 8)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", StationarityWarning)
            full = observed_information(BetaBernoulliProblem(), [theta], z, data).full()
        np.testing.assert_allclose(full, -bb_analytic_hessian(theta, z, data), rtol=1e-4, atol=1e-6)


def test_custom_step_rule():
    blocks = observed_information(QuadraticProblem(), [0.0], [0.0], dataset([[0.0]]), fd_step_rule=1e-3)
    assert blocks.I11[0, 0] == pytest.approx(1.0, rel=1e-6)


def test_warns_away_from_stationarity():
    with pytest.warns(StationarityWarning):
        observed_information(QuadraticWithGradients(), [1.0], [0.0], dataset([[0.0]]))


def test_independent_blocks():
    I11 = np.array([[2.0, 0.3], [0.3, 1.0]])
    blocks = InformationBlocks(I11, np.zeros((2, 3)), np.eye(3))
    schur, given = conditional_param_cov(blocks)
    np.testing.assert_allclose(schur, np.linalg.inv(I11), rtol=1e-12)
    np.testing.assert_allclose(given, schur, rtol=1e-12)


def test_one_dimensional_schur():
    schur, given = conditional_param_cov(InformationBlocks(np.array([[2.0]]), np.array([[1.0]]), np.array([[2.0]])))
    assert schur[0, 0] == pytest.approx(2 / 3, rel=1e-14)
    assert given[0, 0] == pytest.approx(0.5, rel=1e-14)


def test_schur_equals_full_inverse_block():
    gen = np.random.default_rng(2)
    for _ in range(50):
        p, q = int(gen.integers(1, 4)), int(gen.integers(1, 6))
        F = random_spd(gen, p + q)
        schur, given = conditional_param_cov(InformationBlocks(F[:p, :p], F[:p, p:], F[p:, p:]))
        np.testing.assert_allclose(schur, np.linalg.inv(F)[:p, :p], rtol=1e-8, atol=1e-12)
        assert loewner_geq(schur, given)


def test_singular_latent_block():
    with pytest.raises(SingularBlockError):
        conditional_param_cov(InformationBlocks(np.eye(1), np.zeros((1, 2)), np.zeros((2, 2))))


def test_asymmetric_blocks_rejected():
    with pytest.raises(ValueError):
        InformationBlocks(np.array([[1.0, 2.0], [0.0, 1.0]]), np.zeros((2, 1)), np.eye(1))


def test_jackknife_constant_estimator():
    data, _ = simulated("beta-bernoulli", 10, 5)
    np.testing.assert_array_equal(jackknife_cov(lambda d, t0: np.array([1.0, 2.0]), data), np.zeros((2, 2)))


def test_jackknife_of_the_mean():
    x = np.random.default_rng(3).normal(size=25)
    data = dataset(x)
    cov = jackknife_cov(lambda d, t0: np.array([d.values.mean()]), data)
    assert cov[0, 0] == pytest.approx(np.var(x, ddof=1) / x.size, rel=1e-12)


def test_jackknife_needs_enough_individuals():
    with pytest.raises(ValueError):
        jackknife_cov(lambda d, t0: np.zeros(3), dataset([1.0, 2.0, 3.0, 4.0]))


def test_jackknife_names_failing_refit():
    data = dataset(np.arange(6.0))

    def fit(d, t0):
        if t0 is not None and d.n_individuals == 5 and 2.0 not in d.values:
            raise RuntimeError("boom")
        return np.array([d.values.mean()])

    with pytest.raises(InferenceError, match="individual 2"):
        jackknife_cov(fit, data)


def test_bb_fit_information_is_sane():
    data, _ = simulated("beta-bernoulli", 100, 300, seed=4)
    res = bb_fit_mile(data)
    with warnings.catch_warnings():
        warnings.simplefilter("error", StationarityWarning)
        blocks = observed_information(BetaBernoulliProblem(), res.theta, res.z, data)
    schur, given = conditional_param_cov(blocks)
    assert 0 < given[0, 0] <= schur[0, 0] < np.inf
