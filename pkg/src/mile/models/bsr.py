"""Bayesian segmented (change-point) Poisson regression.

Series i is observed at shared timestamps t_1 < ... < t_M inside (0, T)
and has one change point z_i with z_i / T ~ Beta(alpha, beta).  Counts
are Poisson with log-rate beta1 (t - z_i) + a before the change point and
beta2 (t - z_i) + a from it onwards.  The parameter vector is
(alpha, beta, beta1, beta2, a); log(x!) constants are dropped.

The likelihood is not differentiable in z_i (membership of each timestamp
jumps), so z is searched without derivatives and theta is profiled: the
rate part is a concave Poisson regression solved by Newton's method, the
prior part a Beta maximum-likelihood problem.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from ..core import ContinuousBox, IdealLikelihoodProblem, Interval, ParamDomain
from ..optim.search import CubeSearchConfig, random_cube_search
from ..optim.smooth import RootFindingError, damped_newton
from ..specfn import digamma, log_gamma, trigamma

__all__ = [
    "BsrParams",
    "BsrProblem",
    "PRIOR_BOUNDS",
    "default_timestamps",
    "bsr_loglik",
    "bsr_rate_fit",
    "bsr_prior_fit",
    "bsr_profile_batch",
    "bsr_fit_mile",
]

log = logging.getLogger(__name__)

PRIOR_BOUNDS = (1e-3, 1e6)
PARAM_NAMES = ("alpha", "beta", "beta1", "beta2", "a")
# a slope beyond this means the Poisson fit is running off to infinity
_SLOPE_LIMIT = 1e3


@dataclass(frozen=True)
class BsrParams:
    alpha: float
    beta: float
    beta1: float
    beta2: float
    a: float

    def __post_init__(self):
        lo, hi = PRIOR_BOUNDS
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not lo <= v <= hi:
                raise ValueError(f"{name} must lie in [{lo}, {hi}], got {v}")
        if not all(math.isfinite(getattr(self, n)) for n in ("beta1", "beta2", "a")):
            raise ValueError("rate parameters must be finite")

    def as_vector(self):
        return np.array([self.alpha, self.beta, self.beta1, self.beta2, self.a])


def default_timestamps(M, horizon=1.0):
    """Equally spaced t_j = (j - 0.5) T / M."""
    return (np.arange(1, M + 1) - 0.5) * horizon / M


def _unpack(data):
    if data.timestamps is None:
        raise ValueError("segmented regression needs timestamped data")
    return data.values, data.timestamps, data.horizon


def _prior_loglik(alpha, beta, sum_lu, sum_l1u, N):
    return (
        N * (log_gamma(alpha + beta) - log_gamma(alpha) - log_gamma(beta))
        + (alpha - 1.0) * sum_lu
        + (beta - 1.0) * sum_l1u
    )


def bsr_loglik(data, theta, z):
    x, t, T = _unpack(data)
    alpha, beta, b1, b2, a = (float(v) for v in np.asarray(theta, dtype=float).reshape(-1))
    z = np.asarray(z, dtype=float)
    if z.shape != (x.shape[0],) or np.any((z <= 0) | (z >= T)):
        raise ValueError("z must hold one value in (0, T) per series")
    if not (alpha > 0 and beta > 0):
        raise ValueError("alpha and beta must be > 0")
    u = z / T
    prior = _prior_loglik(alpha, beta, np.sum(np.log(u)), np.sum(np.log1p(-u)), z.size)
    d = t[None, :] - z[:, None]
    eta = np.where(t[None, :] < z[:, None], b1, b2) * d + a
    return float(prior + np.sum(x * eta - np.exp(eta)))


# ---------------------------------------------------------------- profiling


class _RateSystem:
    """Poisson part of the likelihood for a batch of segmentations.

    With d = t - z and d1 = d on the first segment (0 elsewhere) the
    log-rate is a + beta2 d + (beta1 - beta2) d1, so every sum the Newton
    iteration needs is a lambda-weighted sum of the fixed features
    (1, d, d1, d^2, d d1); one exp and one batched matmul per evaluation.
    """

    def __init__(self, x, d, seg1):
        P = d.shape[0]
        d = d.reshape(P, -1)
        w1 = seg1.reshape(P, -1)
        d1 = np.where(w1, d, 0.0)
        self.d, self.d1 = d, d1
        self.F = np.stack([np.ones_like(d), d, d1, d * d, d * d1], axis=2)
        xf = np.broadcast_to(x.reshape(-1), d.shape)
        # x-weighted sums: sum x, sum x d, sum x d1
        self.sx = xf.sum(axis=1)
        self.sxd = np.einsum("pk,pk->p", xf, d)
        self.sxd1 = np.einsum("pk,pk->p", xf, d1)
        self.empty1 = ~w1.any(axis=1)
        self.empty2 = w1.all(axis=1)

    def _lam(self, b):
        with np.errstate(over="ignore", invalid="ignore"):
            eta = b[:, 2, None] + b[:, 1, None] * self.d + (b[:, 0] - b[:, 1])[:, None] * self.d1
            return np.exp(eta)

    def terms(self, b):
        lam = self._lam(b)
        S = np.matmul(lam[:, None, :], self.F)[:, 0, :]
        s1, sd, sd1, sdd, sdd1 = S.T
        xeta = b[:, 2] * self.sx + b[:, 1] * self.sxd + (b[:, 0] - b[:, 1]) * self.sxd1
        ll = xeta - s1
        g = np.stack([self.sxd1 - sd1, (self.sxd - self.sxd1) - (sd - sd1), self.sx - s1], axis=1)
        zero = np.zeros_like(s1)
        H = -np.stack([
            np.stack([sdd1, zero, sd1], axis=1),
            np.stack([zero, sdd - sdd1, sd - sd1], axis=1),
            np.stack([sd1, sd - sd1, s1], axis=1),
        ], axis=1)
        for k, empty in ((0, self.empty1), (1, self.empty2)):
            # an empty segment leaves its slope unidentified: freeze it
            if empty.any():
                H[empty, k, :] = 0.0
                H[empty, :, k] = 0.0
                H[empty, k, k] = -1.0
                g[empty, k] = 0.0
        return ll, g, H


def _rate_newton(x, d, seg1, b0, tol=1e-8, max_iter=100, max_halvings=40):
    """Batched Newton ascent for (beta1, beta2, a); returns (b, ok, empty1, empty2).

    A step is halved until the log-likelihood does not drop; a candidate
    that cannot make progress, leaves the finite range or exceeds the
    iteration budget is flagged as not ok.
    """
    system = _RateSystem(x, d, seg1)
    P = d.shape[0]
    b = np.array(b0, dtype=float)
    ok = np.ones(P, dtype=bool)
    done = np.zeros(P, dtype=bool)
    ll, g, H = system.terms(b)
    for _ in range(max_iter):
        active = ~done & ok
        if not active.any():
            break
        step = np.zeros_like(b)
        det = np.linalg.det(H)
        singular = active & ~(np.abs(det) > 0)
        ok &= ~singular
        active &= ~singular
        step[active] = np.linalg.solve(H[active], -g[active][:, :, None])[:, :, 0]
        t = np.ones(P)
        pending = active.copy()
        old = b.copy()
        for _ in range(max_halvings):
            trial = np.where(pending[:, None], old + t[:, None] * step, b)
            tl, tg, tH = system.terms(trial)
            better = pending & np.isfinite(tl) & (tl >= ll - 1e-12 * np.abs(ll))
            b[better], ll[better], g[better], H[better] = trial[better], tl[better], tg[better], tH[better]
            pending &= ~better
            if not pending.any():
                break
            t[pending] *= 0.5
        ok &= ~pending
        done |= active & (np.max(np.abs(b - old), axis=1) < tol)
        ok &= np.all(np.isfinite(b), axis=1) & np.all(np.abs(b[:, :2]) < _SLOPE_LIMIT, axis=1)
    ok &= done
    return b, ok, system.empty1, system.empty2


def _prior_start(u):
    # method of moments per row of u (P, N)
    m = u.mean(axis=1)
    v = u.var(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        common = m * (1 - m) / v - 1.0
    good = np.isfinite(common) & (common > 0)
    lo, hi = PRIOR_BOUNDS
    a0 = np.where(good, np.clip(m * common, lo, hi), 1.0)
    b0 = np.where(good, np.clip((1 - m) * common, lo, hi), 1.0)
    return a0, b0


def _prior_newton(L1, L2, a0, b0, tol=1e-10, max_iter=100):
    """Batched Newton for the Beta MLE score equations, kept inside PRIOR_BOUNDS."""
    lo, hi = PRIOR_BOUNDS
    al, be = a0.copy(), b0.copy()
    done = np.zeros(al.shape, dtype=bool)
    for _ in range(max_iter):
        idx = np.flatnonzero(~done)
        if idx.size == 0:
            break
        A, B = al[idx], be[idx]
        psab = digamma(A + B)
        f1 = psab - digamma(A) + L1[idx]
        f2 = psab - digamma(B) + L2[idx]
        tab = trigamma(A + B)
        j11 = tab - trigamma(A)
        j22 = tab - trigamma(B)
        det = j11 * j22 - tab * tab
        dA = -(j22 * f1 - tab * f2) / det
        dB = -(-tab * f1 + j11 * f2) / det
        # halve until both stay positive
        s = np.ones_like(A)
        for _ in range(60):
            bad = (A + s * dA <= 0) | (B + s * dB <= 0)
            if not bad.any():
                break
            s[bad] *= 0.5
        nA = np.clip(A + s * dA, lo, hi)
        nB = np.clip(B + s * dB, lo, hi)
        moved = np.maximum(np.abs(nA - A) / A, np.abs(nB - B) / B)
        al[idx], be[idx] = nA, nB
        pinned = ((nA == lo) | (nA == hi)) & ((nB == lo) | (nB == hi))
        done[idx] = (moved < tol) | pinned
    return al, be


def bsr_prior_fit(z, T=1.0, theta0=None):
    """(alpha, beta) maximizing the Beta prior term for fixed z via damped Newton."""
    u = np.asarray(z, dtype=float) / T
    L1, L2 = float(np.mean(np.log(u))), float(np.mean(np.log1p(-u)))

    def f(p):
        a, b = p
        if a <= 0 or b <= 0:
            return np.array([np.inf, np.inf])
        s = digamma(a + b)
        return np.array([s - digamma(a) + L1, s - digamma(b) + L2])

    def jac(p):
        a, b = p
        t = trigamma(a + b)
        return np.array([[t - trigamma(a), t], [t, t - trigamma(b)]])

    if theta0 is None:
        a0, b0 = _prior_start(u[None, :])
        theta0 = (a0[0], b0[0])
    return damped_newton(f, jac, np.asarray(theta0, dtype=float), tol=1e-10, max_iter=200)


def bsr_rate_fit(data, z, b0=None, method="newton", tol=1e-8, max_iter=10000):
    """(beta1, beta2, a) maximizing the Poisson part for fixed change points.

    ``method="newton"`` solves the three score equations jointly;
    ``method="coordinate"`` cycles the one-dimensional Newton updates
    beta1 += sum_1 (x - lam) d / sum_1 lam d^2 (likewise beta2) and
    a += sum (x - lam) / sum lam until no update exceeds ``tol``.
    An empty segment keeps its slope at the starting value.
    """
    x, t, T = _unpack(data)
    z = np.asarray(z, dtype=float)
    d = t[None, :] - z[:, None]
    seg1 = t[None, :] < z[:, None]
    if b0 is None:
        b0 = np.array([0.0, 0.0, math.log(max(x.mean(), 1e-12))])
    if method == "newton":
        b, ok, _, _ = _rate_newton(x[None], d[None], seg1[None], np.asarray(b0, dtype=float)[None])
        if not ok[0]:
            raise RootFindingError("Newton iteration for the rate parameters diverged")
        return b[0]
    if method != "coordinate":
        raise ValueError(f"unknown method {method!r}")
    b1, b2, a = (float(v) for v in b0)
    has1, has2 = seg1.any(), (~seg1).any()
    for _ in range(max_iter):
        moves = []
        for k in (0, 1):
            mask = seg1 if k == 0 else ~seg1
            if not (has1 if k == 0 else has2):
                continue
            lam = np.exp(np.where(seg1, b1, b2) * d + a)
            num = np.sum(np.where(mask, (x - lam) * d, 0.0))
            den = np.sum(np.where(mask, lam * d * d, 0.0))
            step = num / den
            if k == 0:
                b1 += step
            else:
                b2 += step
            moves.append(abs(step))
        lam = np.exp(np.where(seg1, b1, b2) * d + a)
        step = np.sum(x - lam) / np.sum(lam)
        a += step
        moves.append(abs(step))
        if not all(map(math.isfinite, (b1, b2, a))):
            break
        if max(moves) < tol:
            return np.array([b1, b2, a])
    raise RootFindingError("coordinate updates for the rate parameters did not converge")


def bsr_profile_batch(data, zs, b0=None):
    """Profile fitness and parameters for a stack of change-point vectors.

    Returns ``(fitness, thetas)``; candidates whose Newton iteration fails
    get fitness -inf and a None parameter vector.
    """
    x, t, T = _unpack(data)
    zs = np.atleast_2d(np.asarray(zs, dtype=float))
    P, N = zs.shape
    d = t[None, None, :] - zs[:, :, None]
    seg1 = t[None, None, :] < zs[:, :, None]
    if b0 is None:
        b0 = np.array([0.0, 0.0, math.log(max(x.mean(), 1e-12))])
    b, ok, _, _ = _rate_newton(x[None], d, seg1, np.broadcast_to(b0, (P, 3)))

    u = zs / T
    lu = np.log(u)
    l1u = np.log1p(-u)
    a0, be0 = _prior_start(u)
    al, be = _prior_newton(lu.mean(axis=1), l1u.mean(axis=1), a0, be0)
    prior = _prior_loglik(al, be, lu.sum(axis=1), l1u.sum(axis=1), N)

    slope = np.where(seg1, b[:, 0, None, None], b[:, 1, None, None])
    with np.errstate(over="ignore", invalid="ignore"):
        eta = slope * d + b[:, 2, None, None]
        rate = np.sum(x[None] * eta - np.exp(eta), axis=(1, 2))
    fit = np.where(ok & np.isfinite(rate), prior + rate, -np.inf)
    thetas = [
        np.array([al[p], be[p], b[p, 0], b[p, 1], b[p, 2]]) if ok[p] else None
        for p in range(P)
    ]
    return fit, thetas


class BsrProblem(IdealLikelihoodProblem):
    name = "bsr"
    param_names = PARAM_NAMES

    def param_domain(self, data):
        lo, hi = PRIOR_BOUNDS
        free = Interval(-math.inf, math.inf)
        return ParamDomain(PARAM_NAMES, (Interval(lo, hi, True, True),) * 2 + (free,) * 3)

    def latent_space(self, data):
        return ContinuousBox.uniform(data.n_individuals, 0.0, data.horizon)

    def log_ideal_likelihood(self, theta, z, data):
        return bsr_loglik(data, theta, z)

    def grad_theta(self, theta, z, data):
        x, t, T = _unpack(data)
        alpha, beta, b1, b2, a = np.asarray(theta, dtype=float).reshape(-1)
        z = np.asarray(z, dtype=float)
        N = z.size
        u = z / T
        s = digamma(alpha + beta)
        d = t[None, :] - z[:, None]
        seg1 = t[None, :] < z[:, None]
        lam = np.exp(np.where(seg1, b1, b2) * d + a)
        r = x - lam
        return np.array([
            N * (s - digamma(alpha)) + np.sum(np.log(u)),
            N * (s - digamma(beta)) + np.sum(np.log1p(-u)),
            np.sum(np.where(seg1, r * d, 0.0)),
            np.sum(np.where(seg1, 0.0, r * d)),
            np.sum(r),
        ])

    def profile_theta(self, z, data, theta0=None):
        try:
            b0 = None if theta0 is None else np.asarray(theta0, dtype=float)[2:]
            rates = bsr_rate_fit(data, z, b0)
            prior = bsr_prior_fit(z, data.horizon)
        except RootFindingError:
            return None
        return np.concatenate([prior, rates])

    def profile_fitness_batch(self, zs, data):
        return bsr_profile_batch(data, zs)

    def random_interior_point(self, data, rng):
        theta = np.array([
            rng.uniform(1, 10), rng.uniform(1, 10),
            rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(0, 2),
        ])
        return theta, rng.uniform(0.05, 0.95, data.n_individuals) * data.horizon


def bsr_fit_mile(data, cfg=None, gen=None):
    """Random cube search over the change points with theta profiled out."""
    _unpack(data)
    cfg = cfg or CubeSearchConfig()
    gen = np.random.default_rng(0) if gen is None else gen
    return random_cube_search(BsrProblem(), data, cfg, gen)
