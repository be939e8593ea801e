"""Observed information, conditional parameter covariances and the jackknife.

The observed information is the negative Hessian of l(theta, Z) at the
estimate, split into the theta block I11, the latent block I22 and the
cross block I12.  Conditioning on the true latents gives the Schur
complement covariance (I11 - I12 I22^-1 I12^T)^-1, conditioning on both
Z and its estimate gives I11^-1.  Covariances are per dataset (not
rescaled by N).
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .core import ContinuousBox, provides

__all__ = [
    "InferenceError",
    "SingularBlockError",
    "StationarityWarning",
    "InformationBlocks",
    "observed_information",
    "conditional_param_cov",
    "loewner_geq",
    "jackknife_cov",
]

log = logging.getLogger(__name__)

_EPS = np.finfo(float).eps
COND_LIMIT = 1e12
STATIONARITY_TOL = 1e-4


class InferenceError(RuntimeError):
    pass


class SingularBlockError(InferenceError):
    pass


class StationarityWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class InformationBlocks:
    I11: np.ndarray
    I12: np.ndarray
    I22: np.ndarray

    def __post_init__(self):
        p, q = self.I11.shape[0], self.I22.shape[0]
        if self.I11.shape != (p, p) or self.I22.shape != (q, q) or self.I12.shape != (p, q):
            raise ValueError("inconsistent block shapes")
        full = self.full()
        if not np.allclose(full, full.T, rtol=0, atol=1e-8 * max(1.0, np.abs(full).max())):
            raise ValueError("blocked information matrix is not symmetric")

    @property
    def p(self):
        return self.I11.shape[0]

    @property
    def q(self):
        return self.I22.shape[0]

    def full(self):
        return np.block([[self.I11, self.I12], [self.I12.T, self.I22]])


def _steps(x, rule, default_power):
    if rule is None:
        return _EPS**default_power * np.maximum(1.0, np.abs(x))
    if callable(rule):
        return np.broadcast_to(np.asarray(rule(x), dtype=float), x.shape).copy()
    return float(rule) * np.maximum(1.0, np.abs(x))


def _fit_inside(z, h, space):
    # shrink steps so z +- h (or +- 2h) stays inside an open box
    if not isinstance(space, ContinuousBox):
        return h
    room = np.minimum(z - space.lower, space.upper - z)
    return np.minimum(h, 0.25 * room)


def observed_information(problem, theta_hat, z_hat, data, fd_step_rule=None):
    """Negative central-difference Hessian of l at (theta_hat, z_hat), blocked.

    With analytic gradients the Hessian columns are central differences of
    the gradient with steps h_k = cbrt(eps) max(1, |x_k|); otherwise second
    differences of l with steps eps^(1/4) max(1, |x_k|).  ``fd_step_rule``
    overrides the steps: a relative step (float) or a callable mapping the
    point to absolute steps.  The result is symmetrized.
    """
    space = problem.latent_space(data)
    if not isinstance(space, ContinuousBox):
        raise InferenceError("observed information needs a continuous latent space")
    theta = np.asarray(getattr(theta_hat, "values", theta_hat), dtype=float).reshape(-1)
    z = np.asarray(getattr(z_hat, "values", z_hat), dtype=float).reshape(-1)
    p, q = theta.size, z.size
    x = np.concatenate([theta, z])
    ll = problem.log_ideal_likelihood
    analytic = provides(problem, "grad_theta") and provides(problem, "grad_z")

    if analytic:
        def grad(v):
            return np.concatenate([
                np.asarray(problem.grad_theta(v[:p], v[p:], data), dtype=float),
                np.asarray(problem.grad_z(v[:p], v[p:], data), dtype=float),
            ])

        h = _steps(x, fd_step_rule, 1.0 / 3.0)
        h[p:] = _fit_inside(z, h[p:], space)
        g0 = grad(x)
        H = np.empty((p + q, p + q))
        for k in range(p + q):
            e = np.zeros_like(x)
            e[k] = h[k]
            H[:, k] = (grad(x + e) - grad(x - e)) / (2.0 * h[k])
    else:
        def f(v):
            return ll(v[:p], v[p:], data)

        h = _steps(x, fd_step_rule, 0.25)
        h[p:] = _fit_inside(z, h[p:], space)
        n = p + q
        f0 = f(x)
        H = np.empty((n, n))
        g0 = np.empty(n)
        for k in range(n):
            ek = np.zeros(n)
            ek[k] = h[k]
            fp, fm = f(x + ek), f(x - ek)
            g0[k] = (fp - fm) / (2 * h[k])
            H[k, k] = (fp - 2 * f0 + fm) / (h[k] * h[k])
            for m in range(k):
                em = np.zeros(n)
                em[m] = h[m]
                H[k, m] = H[m, k] = (
                    f(x + ek + em) - f(x + ek - em) - f(x - ek + em) + f(x - ek - em)
                ) / (4 * h[k] * h[m])

    if not np.all(np.isfinite(H)):
        raise InferenceError("non-finite second differences")
    gnorm = float(np.max(np.abs(g0)))
    if gnorm > STATIONARITY_TOL:
        warnings.warn(
            f"information requested at a non-stationary point (|grad|_inf = {gnorm:.3g})",
            StationarityWarning,
            stacklevel=2,
        )
    info = -0.5 * (H + H.T)
    return InformationBlocks(info[:p, :p], info[:p, p:], info[p:, p:])


def _check_invertible(name, A):
    c = np.linalg.cond(A)
    if not np.isfinite(c) or c > COND_LIMIT:
        raise SingularBlockError(f"{name} is singular (condition number {c:.3g})")


def loewner_geq(A, B, ridge=1e-10):
    """True when A - B is positive semidefinite up to ``ridge`` (Cholesky test)."""
    D = 0.5 * ((A - B) + (A - B).T)
    scale = max(1.0, float(np.max(np.abs(np.diag(A)))))
    try:
        np.linalg.cholesky(D + ridge * scale * np.eye(D.shape[0]))
    except np.linalg.LinAlgError:
        return False
    return True


def conditional_param_cov(blocks):
    """(schur_cov, given_z_cov) = ((I11 - I12 I22^-1 I12^T)^-1, I11^-1)."""
    _check_invertible("I11", blocks.I11)
    _check_invertible("I22", blocks.I22)
    S = blocks.I11 - blocks.I12 @ np.linalg.solve(blocks.I22, blocks.I12.T)
    _check_invertible("Schur complement", S)
    p = blocks.p
    schur = np.linalg.solve(S, np.eye(p))
    given = np.linalg.solve(blocks.I11, np.eye(p))
    schur = 0.5 * (schur + schur.T)
    given = 0.5 * (given + given.T)
    for name, C in (("schur_cov", schur), ("given_z_cov", given)):
        try:
            np.linalg.cholesky(C)
        except np.linalg.LinAlgError:
            raise InferenceError(f"{name} is not positive definite; is the estimate a maximum?") from None
    if not loewner_geq(schur, given):
        raise InferenceError("Schur covariance is not above the given-Z covariance")
    return schur, given


def jackknife_cov(fit_fn, data, return_replicates=False):
    """Delete-one-individual jackknife covariance of ``fit_fn``.

    ``fit_fn(data, theta0)`` returns a parameter vector; refits are warm
    started at the full-data estimate.  Returns
    ((N - 1)/N) sum_i (theta_(i) - mean)(theta_(i) - mean)^T.
    """
    full = np.atleast_1d(np.asarray(fit_fn(data, None), dtype=float))
    N, p = data.n_individuals, full.size
    if N < p + 2:
        raise ValueError(f"jackknife needs N >= p + 2 individuals (N={N}, p={p})")
    reps = np.empty((N, p))
    for i in range(N):
        try:
            reps[i] = np.asarray(fit_fn(data.drop(i), full), dtype=float)
        except Exception as exc:
            raise InferenceError(f"jackknife refit failed without individual {i}: {exc}") from exc
    dev = reps - reps.mean(axis=0)
    cov = (N - 1) / N * dev.T @ dev
    return (cov, reps) if return_replicates else cov
