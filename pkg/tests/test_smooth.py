import math

import numpy as np
import pytest
from scipy import special

from mile.models import BetaBernoulliProblem, LogCauchyProblem, bb_fit_mile, lc_mom_latent
from mile.optim import (
    BcaConfig, ConvergenceError, NoSignChangeError, RootSolveConfig, SingularJacobianError,
    block_coordinate_ascent, damped_newton, solve_scalar_root, solve_scalar_roots,
)
from conftest import simulated
from oracles import bisect, golden_max


def test_scalar_root_quadratic():
    cfg = RootSolveConfig((0.0, 3.0), tolerance=1e-14)
    assert solve_scalar_root(lambda x: x * x - 4, lambda x: 2 * x, cfg) == pytest.approx(2.0, abs=1e-12)
    assert solve_scalar_root(lambda x: x * x - 4, None, cfg) == pytest.approx(2.0, abs=1e-12)


def test_scalar_root_digamma_gap():
    def f(t):
        return 2 * special.digamma(2 * t) - 2 * special.digamma(t) - 2 * math.log(2) - 0.01

    ref = bisect(f, 1e-3, 1e4, tol=1e-14)
    got = solve_scalar_root(f, None, RootSolveConfig((1e-3, 1e4), tolerance=1e-14, max_iterations=300))
    assert got == pytest.approx(ref, rel=1e-12)


def test_scalar_root_no_sign_change():
    with pytest.raises(NoSignChangeError):
        solve_scalar_root(lambda x: x + 10, None, RootSolveConfig((1.0, 2.0)))


def test_scalar_root_iteration_cap():
    with pytest.raises(ConvergenceError):
        solve_scalar_root(lambda x: x - 0.3, None, RootSolveConfig((0.0, 1.0), tolerance=1e-15, max_iterations=3))


def test_vector_roots_match_scalar():
    c = np.linspace(0.5, 8.0, 20)
    roots = solve_scalar_roots(lambda x: x**3 - c, lambda x: 3 * x**2, np.zeros(20), np.full(20, 3.0), tol=1e-14)
    np.testing.assert_allclose(roots, np.cbrt(c), rtol=1e-12)


def test_damped_newton_linear_one_step():
    calls = []

    def jac(x):
        calls.append(1)
        return np.eye(1)

    x = damped_newton(lambda x: x - 1.0, jac, np.array([5.0]))
    assert x == pytest.approx([1.0])
    assert len(calls) == 1


def test_damped_newton_nonlinear_and_singular():
    f = lambda v: np.array([v[0] ** 2 + v[1] ** 2 - 4, v[0] - v[1]])
    J = lambda v: np.array([[2 * v[0], 2 * v[1]], [1.0, -1.0]])
    np.testing.assert_allclose(damped_newton(f, J, [3.0, 1.0], tol=1e-13), [math.sqrt(2)] * 2, rtol=1e-12)
    with pytest.raises(SingularJacobianError):
        damped_newton(f, lambda v: np.zeros((2, 2)), [3.0, 1.0])


def _bb_profile_slope(theta, s, M):
    # d/dtheta of l(theta, zhat(theta)) equals the partial in theta at zhat
    z = (theta + s - 1) / (2 * theta + M - 2)
    return s.size * (2 * special.digamma(2 * theta) - 2 * special.digamma(theta)) + np.sum(np.log(z) + np.log1p(-z))


def test_bca_beta_bernoulli_matches_joint_maximum():
    data, _ = simulated("beta-bernoulli", 20, 100, seed=4)
    s, M = data.row_sums, data.obs_per_individual
    x = data.values

    from oracles import bb_loglik_naive

    def prof(t):
        return bb_loglik_naive(x, t, (t + s - 1) / (2 * t + M - 2))

    grid = np.geomspace(1.01, 200, 400)
    vals = [prof(t) for t in grid]
    k = int(np.argmax(vals))
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]
    coarse = golden_max(prof, lo, hi, tol=1e-6)
    ref = bisect(lambda t: _bb_profile_slope(t, s, M), 0.9 * coarse, 1.1 * coarse, tol=1e-14)

    res = bb_fit_mile(data, 3.0)
    assert res.converged
    assert np.all(np.diff(res.trace) >= -1e-10)
    assert res.theta[0] == pytest.approx(ref, abs=1e-6)


def test_bca_at_fixed_point_stops_immediately():
    data, _ = simulated("beta-bernoulli", 20, 100, seed=5)
    first = bb_fit_mile(data, 3.0)
    again = block_coordinate_ascent(BetaBernoulliProblem(), data, first.theta, first.z)
    assert again.converged and again.iterations == 1
    assert again.theta[0] == pytest.approx(first.theta[0], abs=BcaConfig().param_tolerance)


def test_bca_clamps_boundary_start():
    data, _ = simulated("beta-bernoulli", 10, 50, seed=6)
    z0 = np.where(np.arange(10) % 2 == 0, 0.0, 1.0)
    # exponents are positive at theta=2 so the clamped start is finite
    res = block_coordinate_ascent(BetaBernoulliProblem(), data, [2.0], np.clip(z0, 0.3, 0.7))
    assert res.converged
    res = block_coordinate_ascent(BetaBernoulliProblem(), data, [1.0], z0)
    assert res.converged and np.all((res.z > 0) & (res.z < 1))


def test_bca_log_cauchy_monotone():
    data, _ = simulated("log-cauchy", 30, 200, seed=7)
    with pytest.warns(UserWarning, match="excluded"):
        z0 = lc_mom_latent(data)
    z0 = np.where(np.isfinite(z0), z0, 20.0)
    res = block_coordinate_ascent(LogCauchyProblem(), data, [1.0], z0, BcaConfig(max_outer_iterations=200))
    assert np.all(np.diff(res.trace) >= -1e-10)
