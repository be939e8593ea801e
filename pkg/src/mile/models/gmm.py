"""One-dimensional Gaussian mixture with hard cluster labels as the latent vector.

With labels z_i in {0..K-1} the ideal log-likelihood is

    sum_i [ln pi_{z_i} + ln phi(x_i; mu_{z_i}, sigma^2_{z_i})]

and its profile over (mu, sigma^2, pi) has a closed form from per-cluster
counts, sums and sums of squares.  Clusters with fewer than two members
make a labelling infeasible (the variance would be zero or undefined).

The parameter vector is laid out as (mu_1..mu_K, var_1..var_K, pi_1..pi_K).
"""

from __future__ import annotations

import itertools
import logging
import math
import time
from dataclasses import dataclass

import numpy as np

from ..core import (
    INFEASIBLE,
    CategoricalSpace,
    IdealLikelihoodProblem,
    Interval,
    ParamDomain,
)
from ..optim.search import stepwise_categorical_opt
from .beta_bernoulli import EmResult

__all__ = [
    "VARIANCE_FLOOR",
    "GmmParams",
    "GmmProblem",
    "gmm_profile_theta",
    "gmm_mixture_loglik",
    "gmm_em_fit",
    "gmm_hard_labels",
    "gmm_fit_mile",
    "gmm_accuracy",
]

log = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-6
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True, eq=False)
class GmmParams:
    means: np.ndarray
    variances: np.ndarray
    proportions: np.ndarray

    def __post_init__(self):
        m, v, p = (np.array(a, dtype=float).reshape(-1) for a in (self.means, self.variances, self.proportions))
        if not (m.size == v.size == p.size >= 1):
            raise ValueError("means, variances and proportions need the same length")
        if np.any(v < VARIANCE_FLOOR):
            raise ValueError(f"variances must be >= {VARIANCE_FLOOR}")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("proportions must be nonnegative and sum to 1")
        for name, a in (("means", m), ("variances", v), ("proportions", p)):
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def k(self):
        return self.means.size

    def as_vector(self):
        return np.concatenate([self.means, self.variances, self.proportions])

    @classmethod
    def from_vector(cls, theta):
        theta = np.asarray(theta, dtype=float)
        K = theta.size // 3
        p = theta[2 * K:]
        return cls(theta[:K], theta[K:2 * K], p / p.sum())

    def sorted(self):
        """Same mixture with components ordered by ascending mean."""
        o = np.argsort(self.means, kind="stable")
        return GmmParams(self.means[o], self.variances[o], self.proportions[o])


def _cluster_stats(x, labels, K):
    n = np.bincount(labels, minlength=K).astype(float)
    s = np.bincount(labels, weights=x, minlength=K)
    ss = np.bincount(labels, weights=x * x, minlength=K)
    return n, s, ss


def gmm_profile_theta(data, labels, K):
    """Per-cluster MLEs for fixed labels, or None if some cluster has < 2 members."""
    x = data.values[:, 0]
    labels = np.asarray(labels, dtype=np.int64)
    n, s, ss = _cluster_stats(x, labels, K)
    if np.any(n < 2):
        return None
    mean = s / n
    # two-pass variance for accuracy
    dev = x - mean[labels]
    var = np.bincount(labels, weights=dev * dev, minlength=K) / n
    return GmmParams(mean, np.maximum(var, VARIANCE_FLOOR), n / n.sum())


def _profile_fitness(x, labels, K):
    n, s, ss = _cluster_stats(x, labels, K)
    if np.any(n < 2):
        return INFEASIBLE
    mean = s / n
    raw = np.maximum(ss - n * mean * mean, 0.0)
    var = np.maximum(raw / n, VARIANCE_FLOOR)
    N = x.size
    return float(np.sum(n * np.log(n / N) - 0.5 * n * (_LOG_2PI + np.log(var)) - raw / (2.0 * var)))


def _component_logpdf(x, params):
    # (N, K) matrix of ln pi_k + ln phi(x_i; mu_k, var_k)
    m, v, p = params.means, params.variances, params.proportions
    with np.errstate(divide="ignore"):
        lp = np.log(p)
    d = x[:, None] - m[None, :]
    return lp - 0.5 * (_LOG_2PI + np.log(v)) - d * d / (2.0 * v)


def _logsumexp(a):
    top = np.max(a, axis=1, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    return (top + np.log(np.sum(np.exp(a - top), axis=1, keepdims=True)))[:, 0]


def gmm_mixture_loglik(data, params):
    """Observed-data log-likelihood sum_i ln sum_k pi_k phi(x_i; mu_k, var_k)."""
    return float(np.sum(_logsumexp(_component_logpdf(data.values[:, 0], params))))


def gmm_em_fit(data, K, tol=1e-8, max_iter=1000, gen=None):
    """Standard EM for a K-component 1-D mixture.

    Starts from K distinct data points chosen at random as means, the
    pooled variance and uniform proportions; stops when the observed-data
    log-likelihood gains less than ``tol`` (relative to 1 + |l|).  Variances
    that hit VARIANCE_FLOOR are recorded in ``info["degenerate"]``.
    """
    start = time.perf_counter()
    gen = np.random.default_rng(0) if gen is None else gen
    x = data.values[:, 0]
    if K < 1:
        raise ValueError("K must be >= 1")
    distinct = np.unique(x)
    if distinct.size < K:
        raise ValueError("fewer distinct observations than components")
    means = np.sort(gen.choice(distinct, size=K, replace=False))
    pooled = max(float(np.var(x)), VARIANCE_FLOOR)
    params = GmmParams(means, np.full(K, pooled), np.full(K, 1.0 / K))
    trace = [gmm_mixture_loglik(data, params)]
    degenerate = set()
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        lp = _component_logpdf(x, params)
        resp = np.exp(lp - _logsumexp(lp)[:, None])
        nk = resp.sum(axis=0)
        if np.any(nk <= 0):
            raise RuntimeError("a mixture component lost all responsibility")
        mean = resp.T @ x / nk
        d = x[:, None] - mean[None, :]
        var = np.sum(resp * d * d, axis=0) / nk
        floored = var < VARIANCE_FLOOR
        degenerate.update(np.flatnonzero(floored).tolist())
        params = GmmParams(mean, np.maximum(var, VARIANCE_FLOOR), nk / nk.sum())
        trace.append(gmm_mixture_loglik(data, params))
        if abs(trace[-1] - trace[-2]) < tol * (1.0 + abs(trace[-1])):
            converged = True
            break
    if degenerate:
        log.warning("EM components %s hit the variance floor", sorted(degenerate))
    return EmResult(
        params, it, converged, tuple(trace), (time.perf_counter() - start) * 1e3,
        {"degenerate": sorted(degenerate)},
    )


def gmm_hard_labels(data, params):
    """Maximum-responsibility label for every observation."""
    return np.argmax(_component_logpdf(data.values[:, 0], params), axis=1).astype(np.int64)


class GmmProblem(IdealLikelihoodProblem):
    name = "gmm"

    def __init__(self, K):
        if K < 2:
            raise ValueError("K must be >= 2")
        self.K = K
        self.param_names = (
            tuple(f"mu_{k + 1}" for k in range(K))
            + tuple(f"var_{k + 1}" for k in range(K))
            + tuple(f"pi_{k + 1}" for k in range(K))
        )

    def param_domain(self, data):
        K = self.K
        ivs = (
            (Interval(-math.inf, math.inf),) * K
            + (Interval(VARIANCE_FLOOR, math.inf, closed_lower=True),) * K
            + (Interval(0.0, 1.0, True, True),) * K
        )
        return ParamDomain(self.param_names, ivs)

    def latent_space(self, data):
        return CategoricalSpace(self.K, data.n_individuals)

    def log_ideal_likelihood(self, theta, z, data):
        params = theta if isinstance(theta, GmmParams) else GmmParams.from_vector(theta)
        lp = _component_logpdf(data.values[:, 0], params)
        return float(np.sum(lp[np.arange(lp.shape[0]), np.asarray(z, dtype=np.int64)]))

    def profile_theta(self, z, data, theta0=None):
        params = gmm_profile_theta(data, z, self.K)
        return None if params is None else params.as_vector()

    def profile_fitness(self, z, data):
        return _profile_fitness(data.values[:, 0], np.asarray(z, dtype=np.int64), self.K)

    def random_interior_point(self, data, rng):
        K = self.K
        p = rng.dirichlet(np.ones(K))
        theta = np.concatenate([rng.normal(0, 3, K), rng.uniform(0.2, 3.0, K), p])
        return theta, rng.integers(0, K, data.n_individuals)


def gmm_fit_mile(data, K, gen=None, max_sweeps=100, em_tol=1e-8, em_max_iter=1000):
    """EM, hard assignment by maximum responsibility, then stepwise label moves.

    ``result.info`` carries the EM fit and the fitness of its hard labelling;
    the returned fitness is never below it.
    """
    start = time.perf_counter()
    em = gmm_em_fit(data, K, em_tol, em_max_iter, gen)
    init = gmm_hard_labels(data, em.params)
    problem = GmmProblem(K)
    init_fit = problem.profile_fitness(init, data)
    res = stepwise_categorical_opt(problem, data, init, max_sweeps)
    res.info.update(em=em, init_fitness=init_fit)
    object.__setattr__(res, "wall_time_ms", (time.perf_counter() - start) * 1e3)
    return res


def gmm_accuracy(pred_labels, true_labels, K):
    """Best agreement fraction over all K! relabellings of the prediction."""
    pred = np.asarray(pred_labels, dtype=np.int64)
    true = np.asarray(true_labels, dtype=np.int64)
    if pred.shape != true.shape:
        raise ValueError("label vectors differ in length")
    if pred.size == 0:
        return 1.0
    conf = np.zeros((K, K), dtype=np.int64)
    np.add.at(conf, (pred, true), 1)
    best = max(sum(conf[k, perm[k]] for k in range(K)) for perm in itertools.permutations(range(K)))
    return best / pred.size
