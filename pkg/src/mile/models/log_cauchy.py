"""Log-Cauchy lifetime model with Gaussian discounted observations.

z_i ~ logCauchy(mu, 1) and x_ij | z_i ~ N(exp(-r z_i), 1) with r = 0.05.
Up to constants the ideal log-likelihood is

    sum_i [-ln z_i - ln(1 + (ln z_i - mu)^2)]
      - sum_ij (x_ij - exp(-r z_i))^2 / 2.

The -ln z_i term makes it unbounded as z_i -> 0, so the latent search is
restricted to [Z_LOWER, inf) and the z-step prefers interior local maxima
over the degenerate lower edge.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np

from ..core import ContinuousBox, IdealLikelihoodProblem, Interval, ParamDomain
from ..optim.smooth import (
    BcaConfig,
    RootSolveConfig,
    block_coordinate_ascent,
    solve_scalar_root,
    solve_scalar_roots,
)

__all__ = [
    "LogCauchyParams",
    "LogCauchyProblem",
    "lc_loglik",
    "lc_grad_mu",
    "lc_grad_z",
    "lc_update_z",
    "lc_update_mu",
    "lc_fit_mile",
    "lc_mom_latent",
    "lc_mom_fit",
]

log = logging.getLogger(__name__)

RATE = 0.05
SIGMA1 = 1.0
SIGMA2 = 1.0
Z_LOWER = 1e-4
Z_SEED_UPPER = 200.0
N_SEEDS = 16


@dataclass(frozen=True)
class LogCauchyParams:
    mu: float
    r: float = RATE
    sigma1: float = SIGMA1
    sigma2: float = SIGMA2

    def __post_init__(self):
        if not math.isfinite(self.mu):
            raise ValueError("mu must be finite")
        if (self.r, self.sigma1, self.sigma2) != (RATE, SIGMA1, SIGMA2):
            raise ValueError("r, sigma1 and sigma2 are fixed at 0.05, 1 and 1")


def _mu(theta):
    return float(np.asarray(theta, dtype=float).reshape(-1)[0])


def _stats(data):
    # sufficient statistics per individual: sum x and sum x^2
    return data.row_sums, np.sum(data.values * data.values, axis=1)


def lc_loglik(data, mu, z):
    z = np.asarray(z, dtype=float)
    if z.shape != (data.n_individuals,) or np.any(z <= 0):
        raise ValueError("z must hold one positive value per individual")
    S, Q = _stats(data)
    M = data.obs_per_individual
    e = np.exp(-RATE * z)
    d = np.log(z) - mu
    prior = -np.log(z) - np.log1p(d * d)
    fit = -(Q - 2.0 * e * S + M * e * e) / 2.0
    return float(np.sum(prior) + np.sum(fit))


def lc_grad_mu(data, mu, z):
    d = np.log(np.asarray(z, dtype=float)) - mu
    return float(np.sum(2.0 * d / (1.0 + d * d)))


def _grad_z(z, mu, S, M):
    e = np.exp(-RATE * z)
    d = np.log(z) - mu
    return (-1.0 - 2.0 * d / (1.0 + d * d)) / z - RATE * e * S + RATE * M * e * e


def _hess_z(z, mu, S, M):
    e = np.exp(-RATE * z)
    d = np.log(z) - mu
    q = 2.0 * d / (1.0 + d * d)
    dq = 2.0 * (1.0 - d * d) / (1.0 + d * d) ** 2
    return (1.0 + q - dq) / (z * z) + RATE**2 * e * S - 2.0 * RATE**2 * M * e * e


def _h_z(z, mu, S, Q, M):
    # per-individual contribution to the log-likelihood
    e = np.exp(-RATE * z)
    d = np.log(z) - mu
    return -np.log(z) - np.log1p(d * d) - (Q - 2.0 * e * S + M * e * e) / 2.0


def lc_grad_z(data, mu, z):
    S, _ = _stats(data)
    return _grad_z(np.asarray(z, dtype=float), mu, S, data.obs_per_individual)


def lc_update_z(data, mu, z0=None):
    """Per-individual maximizer of the log-likelihood in z_i for fixed mu.

    Sign changes of the gradient (+ to -) are located on 16 log-spaced
    seeds over (Z_LOWER, 200] plus the previous value, refined by
    safeguarded Newton, and the best root is kept.  An individual without
    any interior local maximum moves to the better domain edge; this is
    returned as the boolean ``at_edge`` mask.  The previous value is always
    a candidate, so the step never lowers the log-likelihood.
    """
    S, Q = _stats(data)
    M = data.obs_per_individual
    N = data.n_individuals
    seeds = np.geomspace(Z_LOWER, Z_SEED_UPPER, N_SEEDS)
    nodes = np.broadcast_to(seeds, (N, N_SEEDS))
    if z0 is not None:
        nodes = np.sort(np.column_stack([nodes, np.asarray(z0, dtype=float)]), axis=1)
    g = _grad_z(nodes, mu, S[:, None], M)

    up = (g[:, :-1] > 0) & (g[:, 1:] <= 0)
    rows, cols = np.nonzero(up)
    best_z = np.full(N, np.nan)
    best_h = np.full(N, -np.inf)
    if rows.size:
        Sr = S[rows]

        def f(x):
            return _grad_z(x, mu, Sr, M)

        def df(x):
            return _hess_z(x, mu, Sr, M)

        roots = solve_scalar_roots(f, df, nodes[rows, cols], nodes[rows, cols + 1], tol=1e-12)
        h = _h_z(roots, mu, Sr, Q[rows], M)
        # keep the best root per individual (rows are sorted)
        order = np.lexsort((-h, rows))
        first = np.r_[True, rows[order][1:] != rows[order][:-1]]
        sel = order[first]
        best_z[rows[sel]] = roots[sel]
        best_h[rows[sel]] = h[sel]

    at_edge = np.isnan(best_z)
    if at_edge.any():
        idx = np.flatnonzero(at_edge)
        lo = np.full(idx.size, Z_LOWER)
        hi = np.full(idx.size, Z_SEED_UPPER)
        h_lo = _h_z(lo, mu, S[idx], Q[idx], M)
        h_hi = _h_z(hi, mu, S[idx], Q[idx], M)
        best_z[idx] = np.where(h_hi > h_lo, hi, lo)
        best_h[idx] = np.maximum(h_hi, h_lo)

    if z0 is not None:
        z0 = np.asarray(z0, dtype=float)
        h0 = _h_z(z0, mu, S, Q, M)
        keep = h0 >= best_h
        best_z = np.where(keep, z0, best_z)
        at_edge &= ~keep
    return best_z, at_edge


def _mu_objective(mu, u):
    return -np.sum(np.log1p((u - mu) ** 2))


def lc_update_mu(z, mu0=None):
    """Maximizer in mu of -sum ln(1 + (ln z_i - mu)^2) (a Cauchy location MLE).

    The objective can be multimodal, so every + to - sign change of the
    derivative on a grid over [min ln z, max ln z] (plus the ln z_i
    themselves) is refined and the best local maximum returned.
    """
    u = np.log(np.asarray(z, dtype=float))
    grid = np.union1d(np.linspace(u.min(), u.max(), 256), u)
    diff = u[None, :] - grid[:, None]
    g = np.sum(2.0 * diff / (1.0 + diff * diff), axis=1)

    def f(m):
        d = u - m
        return float(np.sum(2.0 * d / (1.0 + d * d)))

    def df(m):
        d = u - m
        return float(np.sum(2.0 * (d * d - 1.0) / (1.0 + d * d) ** 2))

    cands = list(grid[g == 0])
    for k in np.flatnonzero((g[:-1] > 0) & (g[1:] < 0)):
        cands.append(solve_scalar_root(f, df, RootSolveConfig((grid[k], grid[k + 1]), tolerance=1e-13)))
    if mu0 is not None:
        cands.append(float(mu0))
    vals = [_mu_objective(c, u) for c in cands]
    return float(cands[int(np.argmax(vals))])


class LogCauchyProblem(IdealLikelihoodProblem):
    name = "log-cauchy"
    param_names = ("mu",)

    def param_domain(self, data):
        return ParamDomain(("mu",), (Interval(-math.inf, math.inf),))

    def latent_space(self, data):
        return ContinuousBox.uniform(data.n_individuals, Z_LOWER, math.inf, closed=True)

    def log_ideal_likelihood(self, theta, z, data):
        return lc_loglik(data, _mu(theta), z)

    def grad_theta(self, theta, z, data):
        return np.array([lc_grad_mu(data, _mu(theta), z)])

    def grad_z(self, theta, z, data):
        return lc_grad_z(data, _mu(theta), z)

    def update_z(self, theta, data, z0=None):
        return lc_update_z(data, _mu(theta), z0)[0]

    def profile_theta(self, z, data, theta0=None):
        return np.array([lc_update_mu(z, None if theta0 is None else _mu(theta0))])

    def random_interior_point(self, data, rng):
        return np.array([rng.uniform(0.0, 4.0)]), rng.uniform(0.5, 60.0, data.n_individuals)


def lc_mom_latent(data):
    """Moment inversion z_i = -ln(mean_j x_ij) / r.

    Individuals whose mean falls outside (0, 1) cannot be inverted; they get
    NaN and a warning is issued.
    """
    xbar = data.row_means
    ok = (xbar > 0) & (xbar < 1)
    if not ok.any():
        raise ValueError("no individual has a mean inside (0, 1)")
    if not ok.all():
        bad = np.flatnonzero(~ok)
        warnings.warn(f"{bad.size} individual(s) excluded from moment inversion: {bad.tolist()[:10]}", stacklevel=2)
    z = np.full(xbar.shape, np.nan)
    z[ok] = -np.log(np.clip(xbar[ok], 1e-300, 1.0 - 1e-16)) / RATE
    return z


def lc_mom_fit(data):
    """Moment estimator of mu: median of ln z over the invertible individuals."""
    z = lc_mom_latent(data)
    return float(np.median(np.log(z[np.isfinite(z)])))


def lc_fit_mile(data, cfg=None):
    """MILE by block coordinate ascent started from the moment estimates."""
    problem = LogCauchyProblem()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        z0 = lc_mom_latent(data)
    z0 = np.where(np.isfinite(z0), np.clip(z0, Z_LOWER, Z_SEED_UPPER), np.where(data.row_means >= 1, Z_LOWER, Z_SEED_UPPER))
    mu0 = float(np.median(np.log(z0)))
    res = block_coordinate_ascent(problem, data, np.array([mu0]), z0, cfg or BcaConfig())
    _, edge = lc_update_z(data, res.theta[0], res.z)
    if edge.any():
        log.info("%d individual(s) have no interior maximum in z", int(edge.sum()))
    res.info["edge_individuals"] = np.flatnonzero(edge).tolist()
    return res
