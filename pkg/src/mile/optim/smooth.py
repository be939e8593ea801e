"""Block coordinate ascent for differentiable ideal likelihoods.

Also holds the inner solvers the models rely on: a bracketed
Newton/bisection scalar root finder (plus an elementwise vectorized
variant) and a damped Newton method for small nonlinear systems.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ..core import (
    ContinuousBox,
    FitResult,
    LatentVector,
    ParameterVector,
    provides,
)

__all__ = [
    "RootFindingError",
    "NoSignChangeError",
    "SingularJacobianError",
    "ConvergenceError",
    "RootSolveConfig",
    "BcaConfig",
    "solve_scalar_root",
    "solve_scalar_roots",
    "damped_newton",
    "block_coordinate_ascent",
]

log = logging.getLogger(__name__)


class RootFindingError(RuntimeError):
    pass


class NoSignChangeError(RootFindingError):
    pass


class SingularJacobianError(RootFindingError):
    pass


class ConvergenceError(RootFindingError):
    pass


@dataclass(frozen=True)
class RootSolveConfig:
    bracket: tuple
    tolerance: float = 1e-10
    max_iterations: int = 100
    x0: Optional[float] = None

    def __post_init__(self):
        lo, hi = self.bracket
        if not lo < hi:
            raise ValueError(f"bracket needs lo < hi, got {self.bracket}")
        if self.tolerance <= 0 or self.max_iterations < 1:
            raise ValueError("tolerance must be > 0 and max_iterations >= 1")


def solve_scalar_root(f, dfdx=None, cfg=None, **kwargs):
    """Root of ``f`` inside ``cfg.bracket``.

    Newton steps (when ``dfdx`` is given) are taken only if they land
    strictly inside the current bracket; otherwise the bracket is bisected.
    Stops once ``|f(x)| <= tol`` or the bracket is narrower than ``tol``.
    """
    if cfg is None:
        cfg = RootSolveConfig(**kwargs)
    a, b = map(float, cfg.bracket)
    fa, fb = f(a), f(b)
    if fa == 0.0:
        return a
    if fb == 0.0:
        return b
    if not (np.isfinite(fa) and np.isfinite(fb)) or fa * fb > 0:
        raise NoSignChangeError(f"no sign change on [{a}, {b}]: f = ({fa}, {fb})")
    tol = cfg.tolerance
    x = cfg.x0 if cfg.x0 is not None and a < cfg.x0 < b else 0.5 * (a + b)
    for _ in range(cfg.max_iterations):
        fx = f(x)
        if abs(fx) <= tol:
            return x
        if (fx < 0) == (fa < 0):
            a, fa = x, fx
        else:
            b = x
        if b - a <= tol:
            return 0.5 * (a + b)
        step_ok = False
        if dfdx is not None:
            d = dfdx(x)
            if d != 0 and np.isfinite(d):
                xn = x - fx / d
                step_ok = a < xn < b
        x = xn if step_ok else 0.5 * (a + b)
    raise ConvergenceError(f"root not found within {cfg.max_iterations} iterations")


def solve_scalar_roots(f, dfdx, lo, hi, tol=1e-10, max_iter=200, x0=None):
    """Elementwise safeguarded Newton for many independent scalar equations.

    ``f`` and ``dfdx`` map an array of abscissae to an array of values.
    Every ``f(lo[k])``/``f(hi[k])`` pair must differ in sign; entries that
    do not converge are left at their last bracket midpoint.
    """
    a = np.array(lo, dtype=float)
    b = np.array(hi, dtype=float)
    fa = f(a)
    fb = f(b)
    if np.any(fa * fb > 0):
        raise NoSignChangeError("some brackets do not change sign")
    x = 0.5 * (a + b) if x0 is None else np.where((x0 > a) & (x0 < b), x0, 0.5 * (a + b))
    done = (fa == 0) | (fb == 0)
    x = np.where(fa == 0, a, np.where(fb == 0, b, x))
    for _ in range(max_iter):
        fx = f(x)
        done |= np.abs(fx) <= tol
        if done.all():
            break
        same = (fx < 0) == (fa < 0)
        a = np.where(same & ~done, x, a)
        fa = np.where(same & ~done, fx, fa)
        b = np.where(~same & ~done, x, b)
        done |= (b - a) <= tol * np.maximum(1.0, np.abs(x))
        d = dfdx(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            xn = x - fx / d
        ok = np.isfinite(xn) & (xn > a) & (xn < b)
        x = np.where(done, x, np.where(ok, xn, 0.5 * (a + b)))
    return x


def damped_newton(f, jac, x0, tol=1e-10, max_iter=100, max_halvings=30):
    """Newton's method for ``f(x) = 0`` with step halving.

    A step is halved (up to ``max_halvings`` times) while the residual
    max-norm fails to decrease or becomes non-finite.
    """
    x = np.array(x0, dtype=float)
    fx = np.asarray(f(x), dtype=float)
    if not np.all(np.isfinite(fx)):
        raise RootFindingError("residual is not finite at the starting point")
    norm = np.max(np.abs(fx))
    for _ in range(max_iter):
        if norm <= tol:
            return x
        J = np.asarray(jac(x), dtype=float)
        if not np.all(np.isfinite(J)):
            raise SingularJacobianError("Jacobian is not finite")
        try:
            step = np.linalg.solve(J, -fx)
        except np.linalg.LinAlgError:
            raise SingularJacobianError("singular Jacobian") from None
        t = 1.0
        for _ in range(max_halvings + 1):
            xn = x + t * step
            fn = np.asarray(f(xn), dtype=float)
            nn = np.max(np.abs(fn)) if np.all(np.isfinite(fn)) else math.inf
            if nn < norm:
                break
            t *= 0.5
        else:
            raise ConvergenceError("step halving failed to reduce the residual")
        x, fx, norm = xn, fn, nn
    if norm <= tol:
        return x
    raise ConvergenceError(f"residual {norm:.3g} above tolerance after {max_iter} iterations")


# ------------------------------------------------------------------- BCA


@dataclass(frozen=True)
class BcaConfig:
    max_outer_iterations: int = 500
    loglik_tolerance: float = 1e-8
    param_tolerance: float = 1e-8
    # slack for the non-decreasing check on every half-step
    monotone_slack: float = 1e-10

    def __post_init__(self):
        if self.max_outer_iterations < 1:
            raise ValueError("max_outer_iterations must be >= 1")
        if self.loglik_tolerance <= 0 or self.param_tolerance <= 0:
            raise ValueError("tolerances must be > 0")


def _gradient_z_step(problem, theta, z, data, space):
    # fallback when the model has no closed-form/solved z update: one
    # bracketed root per coordinate of the partial gradient
    if not isinstance(space, ContinuousBox) or not space.is_finite:
        raise RootFindingError("gradient z-step needs a finite continuous box")
    lo_all = space.clamp(space.lower)
    hi_all = space.clamp(space.upper)
    z = z.copy()
    for k in range(z.size):
        def g(v, k=k):
            zz = z.copy()
            zz[k] = v
            return problem.grad_z(theta, zz, data)[k]

        try:
            z[k] = solve_scalar_root(g, cfg=RootSolveConfig((lo_all[k], hi_all[k]), x0=z[k]))
        except RootFindingError as exc:
            raise RootFindingError(f"z-step failed at coordinate {k}: {exc}") from exc
    return z


def _gradient_theta_step(problem, theta, z, data):
    def g(t):
        return problem.grad_theta(t, z, data)

    def jac(t):
        h = 1e-6 * np.maximum(1.0, np.abs(t))
        cols = []
        for k in range(t.size):
            e = np.zeros_like(t)
            e[k] = h[k]
            cols.append((g(t + e) - g(t - e)) / (2 * h[k]))
        return np.column_stack(cols)

    return damped_newton(g, jac, theta, tol=1e-10)


def block_coordinate_ascent(problem, data, init_theta, init_z, cfg=None):
    """Alternate exact maximization over Z (all coordinates) and theta.

    Uses ``problem.update_z`` / ``problem.profile_theta`` when available,
    falling back to root solves of ``grad_z`` / ``grad_theta``.  Each
    half-step that would lower the log-likelihood by more than
    ``cfg.monotone_slack`` is rejected.  ``result.trace`` holds l after the
    initial point and after every half-step.
    """
    cfg = cfg or BcaConfig()
    start = time.perf_counter()
    domain = problem.param_domain(data)
    space = problem.latent_space(data)
    ll = problem.log_ideal_likelihood

    theta = domain.clip(np.asarray(getattr(init_theta, "values", init_theta), dtype=float))
    z = space.clamp(np.asarray(getattr(init_z, "values", init_z), dtype=float))
    cur = ll(theta, z, data)
    if not np.isfinite(cur):
        raise ValueError("log-likelihood is not finite at the initial point")
    trace = [cur]
    converged = False
    it = 0
    for it in range(1, cfg.max_outer_iterations + 1):
        if provides(problem, "update_z"):
            z_new = space.clamp(problem.update_z(theta, data, z))
        else:
            z_new = _gradient_z_step(problem, theta, z, data, space)
        val = ll(theta, z_new, data)
        if val < cur - cfg.monotone_slack or not np.isfinite(val):
            log.debug("z-step rejected at iteration %d (%.17g < %.17g)", it, val, cur)
            z_new, val = z, cur
        trace.append(val)

        if provides(problem, "profile_theta"):
            theta_new = problem.profile_theta(z_new, data, theta)
            if theta_new is None:
                raise RootFindingError(
                    f"theta-step failed at iteration {it}: no finite profile maximizer for the current latents"
                )
            theta_new = domain.clip(theta_new)
        else:
            theta_new = domain.clip(_gradient_theta_step(problem, theta, z_new, data))
        new = ll(theta_new, z_new, data)
        if new < val - cfg.monotone_slack or not np.isfinite(new):
            log.debug("theta-step rejected at iteration %d", it)
            theta_new, new = theta, val
        trace.append(new)

        step = max(np.max(np.abs(theta_new - theta)), np.max(np.abs(z_new - z)))
        gain = abs(new - trace[-3])
        theta, z = theta_new, z_new
        cur = new
        # both tests must pass: on flat likelihoods l stalls long before the iterates do
        if gain < cfg.loglik_tolerance and step < cfg.param_tolerance:
            converged = True
            break

    elapsed = (time.perf_counter() - start) * 1e3
    return FitResult(
        theta_hat=ParameterVector(theta, domain),
        z_hat=LatentVector(z, space),
        loglik=ll(theta, z, data),
        iterations=it,
        converged=converged,
        wall_time_ms=elapsed,
        trace=tuple(trace),
    )
