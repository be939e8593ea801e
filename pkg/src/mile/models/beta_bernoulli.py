"""Beta-Bernoulli random-effects model.

Individual i has a success probability z_i ~ Beta(theta, theta) and M
Bernoulli(z_i) trials with s_i successes.  The ideal log-likelihood is

    N (lnG(2 theta) - 2 lnG(theta))
      + sum_i [(theta + s_i - 1) ln z_i + (theta - s_i + M - 1) ln(1 - z_i)].
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from ..core import (
    CLAMP_EPS,
    ContinuousBox,
    IdealLikelihoodProblem,
    Interval,
    ParamDomain,
)
from ..optim.smooth import (
    BcaConfig,
    ConvergenceError,
    NoSignChangeError,
    RootSolveConfig,
    block_coordinate_ascent,
    solve_scalar_root,
)
from ..specfn import digamma, log_gamma, trigamma

__all__ = [
    "BetaBernoulliParams",
    "BetaBernoulliProblem",
    "EmResult",
    "bb_loglik",
    "bb_zhat",
    "bb_theta_update",
    "bb_marginal_loglik",
    "bb_em_fit",
    "bb_fit_mile",
]

THETA_BRACKET = (1e-3, 1e4)
# geometric bracket growth stops here; beyond it the root is treated as absent
THETA_BRACKET_LIMIT = 1e12


@dataclass(frozen=True)
class BetaBernoulliParams:
    theta: float

    def __post_init__(self):
        if not (math.isfinite(self.theta) and self.theta > 0):
            raise ValueError(f"theta must be finite and > 0, got {self.theta}")


def _check_theta(theta, M):
    theta = float(np.asarray(theta).reshape(-1)[0])
    if not theta > 0:
        raise ValueError(f"theta must be > 0, got {theta}")
    if 2 * theta + M - 2 <= 0:
        raise ValueError("2*theta + M - 2 must be > 0")
    return theta


def bb_loglik(data, theta, z):
    """Ideal log-likelihood; -inf when some z_i sits on a boundary it cannot reach."""
    M = data.obs_per_individual
    theta = _check_theta(theta, M)
    z = np.asarray(z, dtype=float)
    if z.shape != (data.n_individuals,) or np.any((z < 0) | (z > 1)):
        raise ValueError("z must hold one value in [0, 1] per individual")
    s = data.row_sums
    a = theta + s - 1.0
    b = theta - s + M - 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        # 0 * log 0 counts as 0
        ta = np.where(a == 0, 0.0, a * np.log(z))
        tb = np.where(b == 0, 0.0, b * np.log1p(-z))
    total = ta.sum() + tb.sum()
    if np.isnan(total):
        return -math.inf
    return data.n_individuals * (log_gamma(2 * theta) - 2 * log_gamma(theta)) + float(total)


def bb_zhat(theta, s, M):
    """Closed-form maximizer of the ideal likelihood in z_i, clamped to (eps, 1 - eps)."""
    denom = 2.0 * theta + M - 2.0
    if not denom > 0:
        raise ValueError("degenerate denominator 2*theta + M - 2 <= 0")
    z = (theta + np.asarray(s, dtype=float) - 1.0) / denom
    z = np.clip(z, CLAMP_EPS, 1.0 - CLAMP_EPS)
    return float(z) if np.ndim(z) == 0 else z


def _solve_digamma_gap(c, x0=None):
    # root of 2 psi(2 t) - 2 psi(t) = c; the left side falls from +inf to 2 ln 2
    def f(t):
        return 2.0 * digamma(2.0 * t) - 2.0 * digamma(t) - c

    def df(t):
        return 4.0 * trigamma(2.0 * t) - 2.0 * trigamma(t)

    lo, hi = THETA_BRACKET
    while f(lo) < 0 and lo > 1e-300:
        lo *= 1e-3
    while f(hi) > 0:
        if hi >= THETA_BRACKET_LIMIT:
            raise NoSignChangeError(
                f"no finite root: target {c!r} is not above the limit 2 ln 2 by enough"
            )
        hi *= 10.0
    return solve_scalar_root(f, df, RootSolveConfig((lo, hi), tolerance=1e-13, max_iterations=200, x0=x0))


def bb_theta_update(z, theta0=None):
    """Exact maximizer of the ideal likelihood in theta for fixed z."""
    z = np.asarray(z, dtype=float)
    if z.size == 0 or np.any((z <= 0) | (z >= 1)):
        raise ValueError("z must be non-empty and strictly inside (0, 1)")
    c = -float(np.mean(np.log(z) + np.log1p(-z)))
    return _solve_digamma_gap(c, theta0)


def bb_marginal_loglik(data, theta):
    """Beta-Binomial marginal log-likelihood of the observed sequences."""
    theta = float(theta)
    if not theta > 0:
        raise ValueError("theta must be > 0")
    M = data.obs_per_individual
    s = data.row_sums
    lbeta = log_gamma(theta + s) + log_gamma(theta + M - s) - log_gamma(2 * theta + M)
    return float(np.sum(lbeta) - data.n_individuals * (2 * log_gamma(theta) - log_gamma(2 * theta)))


@dataclass(frozen=True)
class EmResult:
    params: object
    iterations: int
    converged: bool
    loglik_trace: tuple
    wall_time_ms: float = 0.0
    info: dict = field(default_factory=dict)


def bb_em_fit(data, theta0=1.0, tol=1e-8, max_iter=1000):
    """EM for theta with z_i integrated out.

    The E-step uses the Beta(theta + s_i, theta - s_i + M) posterior;
    the M-step solves 2 psi(2 theta') - 2 psi(theta') equal to minus the
    average posterior expectation of ln z + ln(1 - z).  ``params`` of the
    result is the final theta.
    """
    start = time.perf_counter()
    M = data.obs_per_individual
    if M < 1:
        raise ValueError("no observations")
    theta = float(theta0)
    if not theta > 0:
        raise ValueError("theta0 must be > 0")
    s = data.row_sums
    trace = [bb_marginal_loglik(data, theta)]
    for it in range(1, max_iter + 1):
        e_log = digamma(theta + s) + digamma(theta - s + M) - 2.0 * digamma(2.0 * theta + M)
        new = _solve_digamma_gap(-float(np.mean(e_log)), theta)
        trace.append(bb_marginal_loglik(data, new))
        step = abs(new - theta)
        theta = new
        if step < tol:
            return EmResult(theta, it, True, tuple(trace), (time.perf_counter() - start) * 1e3, {})
    raise ConvergenceError(f"EM did not converge in {max_iter} iterations (theta={theta})")


class BetaBernoulliProblem(IdealLikelihoodProblem):
    name = "beta-bernoulli"
    param_names = ("theta",)

    def param_domain(self, data):
        return ParamDomain(("theta",), (Interval(0.0, math.inf),))

    def latent_space(self, data):
        return ContinuousBox.uniform(data.n_individuals, 0.0, 1.0)

    def log_ideal_likelihood(self, theta, z, data):
        return bb_loglik(data, theta, z)

    def grad_theta(self, theta, z, data):
        t = float(np.asarray(theta).reshape(-1)[0])
        z = np.asarray(z, dtype=float)
        g = data.n_individuals * (2 * digamma(2 * t) - 2 * digamma(t)) + np.sum(np.log(z) + np.log1p(-z))
        return np.array([g])

    def grad_z(self, theta, z, data):
        t = float(np.asarray(theta).reshape(-1)[0])
        M = data.obs_per_individual
        s = data.row_sums
        return (t + s - 1) / z - (t - s + M - 1) / (1 - z)

    def update_z(self, theta, data, z0=None):
        t = float(np.asarray(theta).reshape(-1)[0])
        return bb_zhat(t, data.row_sums, data.obs_per_individual)

    def profile_theta(self, z, data, theta0=None):
        try:
            t0 = None if theta0 is None else float(np.asarray(theta0).reshape(-1)[0])
            return np.array([bb_theta_update(z, t0)])
        except (NoSignChangeError, ConvergenceError, ValueError):
            return None

    def random_interior_point(self, data, rng):
        return np.array([rng.uniform(0.5, 20.0)]), rng.uniform(0.05, 0.95, data.n_individuals)


def bb_fit_mile(data, theta0=1.0, cfg=None):
    """MILE by block coordinate ascent from theta0 and its closed-form z."""
    problem = BetaBernoulliProblem()
    z0 = bb_zhat(theta0, data.row_sums, data.obs_per_individual)
    return block_coordinate_ascent(problem, data, np.array([theta0]), z0, cfg or BcaConfig())
