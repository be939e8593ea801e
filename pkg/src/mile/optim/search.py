"""Derivative-free optimizers over the latent vector.

All three evaluate a latent candidate Z by its profile fitness
g(Z) = l(theta_hat(Z), Z), with theta_hat(Z) the exact parameter
maximizer supplied by the model.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..core import (
    INFEASIBLE,
    CategoricalSpace,
    ContinuousBox,
    FitResult,
    LatentVector,
    ParameterVector,
    provides,
)

__all__ = [
    "SearchError",
    "GaConfig",
    "CubeSearchConfig",
    "profile_fitness",
    "evaluate_population",
    "hybrid_ga",
    "random_cube_search",
    "stepwise_categorical_opt",
]

log = logging.getLogger(__name__)


class SearchError(RuntimeError):
    pass


@dataclass(frozen=True)
class GaConfig:
    population: int = 100
    max_generations: int = 200
    elite_fraction: float = 0.02
    elimination_fraction: float = 0.30
    mutation_rate: float = 0.05
    # Gaussian mutation sd as a fraction of each coordinate's range
    mutation_scale: float = 0.10
    init_region: Optional[tuple] = None

    def __post_init__(self):
        if self.population < 4:
            raise ValueError("population must be >= 4")
        if self.max_generations < 1:
            raise ValueError("max_generations must be >= 1")
        for name in ("elite_fraction", "elimination_fraction", "mutation_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.elite_fraction + self.elimination_fraction >= 1.0:
            raise ValueError("elite_fraction + elimination_fraction must be < 1")


@dataclass(frozen=True)
class CubeSearchConfig:
    population: int = 100
    max_iterations: int = 50
    keep_fraction: float = 0.2
    # share of cube samples centred on a uniform crossover of two elites
    crossover_rate: float = 0.5
    initial_region: Optional[tuple] = None

    def __post_init__(self):
        if not 0.0 < self.keep_fraction < 1.0:
            raise ValueError("keep_fraction must lie in (0, 1)")
        if not 0.0 <= self.crossover_rate <= 1.0:
            raise ValueError("crossover_rate must lie in [0, 1]")
        if self.population < 2 or self.max_iterations < 1:
            raise ValueError("population must be >= 2 and max_iterations >= 1")
        if self.initial_region is not None:
            lo, hi = (np.asarray(v, dtype=float) for v in self.initial_region)
            if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
                raise ValueError("initial_region must be finite")


# ------------------------------------------------------------ evaluation


def profile_fitness(problem, z, data):
    """(g(z), theta_hat(z)); g is INFEASIBLE when the profile step fails."""
    theta = problem.profile_theta(z, data)
    if theta is None:
        return INFEASIBLE, None
    val = problem.log_ideal_likelihood(theta, z, data)
    if not np.isfinite(val):
        return INFEASIBLE, theta
    return float(val), theta


def evaluate_population(problem, zs, data):
    """Profile fitness for each row of ``zs``; uses the batch hook if present."""
    if provides(problem, "profile_fitness_batch"):
        fit, thetas = problem.profile_fitness_batch(zs, data)
        fit = np.where(np.isfinite(fit), fit, INFEASIBLE)
        return fit, list(thetas)
    fit = np.empty(len(zs))
    thetas = []
    for j, z in enumerate(zs):
        fit[j], th = profile_fitness(problem, z, data)
        thetas.append(th)
    return fit, thetas


def _rank(fitness):
    # descending, ties keep index order
    return np.argsort(-fitness, kind="stable")


def _region(space, region):
    if region is None:
        if not space.is_finite:
            raise SearchError("an explicit search region is needed for an unbounded latent space")
        lo, hi = space.lower, space.upper
    else:
        lo, hi = (np.broadcast_to(np.asarray(v, dtype=float), (space.dim,)) for v in region)
    lo_c = space.clamp(np.maximum(lo, space.lower))
    hi_c = space.clamp(np.minimum(hi, space.upper))
    if np.any(lo_c >= hi_c) or np.any(hi <= space.lower) or np.any(lo >= space.upper):
        raise SearchError("search region does not intersect the latent domain")
    return lo_c, hi_c


def _result(problem, data, z, theta, fitness, iterations, converged, start, trace, **info):
    return FitResult(
        theta_hat=ParameterVector(theta, problem.param_domain(data)),
        z_hat=LatentVector(z, problem.latent_space(data)),
        loglik=float(fitness),
        iterations=iterations,
        converged=converged,
        wall_time_ms=(time.perf_counter() - start) * 1e3,
        trace=tuple(trace),
        info=info,
    )


# ------------------------------------------------------------ genetic algorithm


def hybrid_ga(problem, data, cfg=None, gen=None):
    """Genetic search over Z with theta profiled out for every chromosome.

    Each generation is ranked by profile fitness; the top ``elite_fraction``
    passes through unchanged, the bottom ``elimination_fraction`` is
    replaced by fresh random chromosomes and the rest are children of
    uniform crossover between surviving parents followed by mutation
    (Gaussian for continuous genes, a random relabel for categorical ones).
    ``result.trace`` is the best fitness of every generation.
    """
    cfg = cfg or GaConfig()
    gen = np.random.default_rng(0) if gen is None else gen
    start = time.perf_counter()
    space = problem.latent_space(data)
    P, d = cfg.population, space.dim
    categorical = isinstance(space, CategoricalSpace)

    if categorical:
        K = space.n_categories

        def fresh(n):
            return gen.integers(0, K, size=(n, d))
    else:
        lo, hi = _region(space, cfg.init_region)
        width = hi - lo

        def fresh(n):
            return lo + gen.random((n, d)) * width

    n_elite = max(1, int(round(cfg.elite_fraction * P)))
    n_elim = int(round(cfg.elimination_fraction * P))
    n_child = P - n_elite - n_elim
    n_parents = P - n_elim

    pop = fresh(P)
    fit, thetas = evaluate_population(problem, pop, data)
    if not np.any(np.isfinite(fit)):
        raise SearchError("every chromosome of the initial population is infeasible")

    trace = []
    for g in range(cfg.max_generations):
        order = _rank(fit)
        pop, fit = pop[order], fit[order]
        thetas = [thetas[k] for k in order]
        trace.append(float(fit[0]))
        if g == cfg.max_generations - 1:
            break

        pa = gen.integers(0, n_parents, size=n_child)
        pb = gen.integers(0, n_parents, size=n_child)
        mask = gen.random((n_child, d)) < 0.5
        children = np.where(mask, pop[pa], pop[pb])
        mut = gen.random((n_child, d)) < cfg.mutation_rate
        if categorical:
            children = np.where(mut, gen.integers(0, K, size=(n_child, d)), children)
        else:
            noise = gen.standard_normal((n_child, d)) * (cfg.mutation_scale * width)
            children = np.where(mut, np.clip(children + noise, lo, hi), children)
        newcomers = np.concatenate([children, fresh(n_elim)]) if n_elim else children

        new_fit, new_thetas = evaluate_population(problem, newcomers, data)
        pop = np.concatenate([pop[:n_elite], newcomers])
        fit = np.concatenate([fit[:n_elite], new_fit])
        thetas = thetas[:n_elite] + new_thetas

    return _result(problem, data, pop[0], thetas[0], fit[0], len(trace), True, start, trace)


# ------------------------------------------------------------ random cube search


def _split_counts(total, k):
    base, extra = divmod(total, k)
    return np.array([base + (1 if j < extra else 0) for j in range(k)])


def random_cube_search(problem, data, cfg=None, gen=None):
    """Population search in shrinking cubes around the best candidates.

    At iteration ``i`` the top ``keep_fraction`` of the population is kept
    and every kept candidate spawns uniform samples inside the cube of
    half-width ``1/sqrt(i)`` around it (or, with probability
    ``crossover_rate``, around a uniform crossover of it with another kept
    candidate), intersected with the latent domain.  Kept candidates stay in
    the population, so the running best never decreases.  ``result.trace``
    is the best fitness after each evaluation round.
    """
    cfg = cfg or CubeSearchConfig()
    gen = np.random.default_rng(0) if gen is None else gen
    start = time.perf_counter()
    space = problem.latent_space(data)
    if not isinstance(space, ContinuousBox):
        raise SearchError("random cube search needs a continuous latent space")
    lo, hi = _region(space, cfg.initial_region)
    dom_lo, dom_hi = space.clamp(space.lower), space.clamp(space.upper)
    P, d = cfg.population, space.dim
    n_keep = max(1, int(round(cfg.keep_fraction * P)))
    counts = _split_counts(P - n_keep, n_keep)

    pop = lo + gen.random((P, d)) * (hi - lo)
    fit, thetas = evaluate_population(problem, pop, data)
    trace = []
    for i in range(1, cfg.max_iterations + 1):
        order = _rank(fit)[:n_keep]
        elites, elite_fit = pop[order], fit[order]
        elite_thetas = [thetas[k] for k in order]
        trace.append(float(elite_fit[0]))
        if not np.isfinite(elite_fit[0]):
            log.debug("cube search iteration %d: no feasible candidate yet", i)

        h = 1.0 / math.sqrt(i)
        owner = np.repeat(np.arange(n_keep), counts)
        centers = elites[owner]
        if n_keep > 1 and cfg.crossover_rate > 0:
            cross = gen.random(owner.size) < cfg.crossover_rate
            mates = elites[gen.integers(0, n_keep, size=owner.size)]
            pick = gen.random((owner.size, d)) < 0.5
            centers = np.where(cross[:, None] & pick, mates, centers)
        c_lo = np.maximum(centers - h, dom_lo)
        c_hi = np.minimum(centers + h, dom_hi)
        samples = c_lo + gen.random((owner.size, d)) * (c_hi - c_lo)

        new_fit, new_thetas = evaluate_population(problem, samples, data)
        pop = np.concatenate([elites, samples])
        fit = np.concatenate([elite_fit, new_fit])
        thetas = elite_thetas + new_thetas

    best = _rank(fit)[0]
    trace.append(float(fit[best]))
    if not np.isfinite(fit[best]):
        raise SearchError("no feasible candidate found")
    return _result(problem, data, pop[best], thetas[best], fit[best], cfg.max_iterations, True, start, trace)


# ------------------------------------------------------------ categorical


def stepwise_categorical_opt(problem, data, init_labels, max_sweeps=100):
    """Greedy single-label moves until no neighbour improves g.

    Individuals are visited in index order and categories in label order;
    a move is accepted as soon as it raises g (first improvement), and the
    scan continues from the updated labelling.  Gains below
    ``1e-12 * max(1, |g|)`` count as ties so that roundoff cannot cycle
    between equivalent labellings.
    """
    start = time.perf_counter()
    space = problem.latent_space(data)
    if not isinstance(space, CategoricalSpace):
        raise SearchError("stepwise categorical optimization needs a categorical latent space")
    K = space.n_categories
    z = np.array(getattr(init_labels, "values", init_labels), dtype=np.int64)
    if z.shape != (space.dim,) or np.any((z < 0) | (z >= K)):
        raise SearchError("initial labels do not match the latent space")

    if provides(problem, "profile_fitness"):
        def g(labels):
            return problem.profile_fitness(labels, data)
    else:
        def g(labels):
            return profile_fitness(problem, labels, data)[0]

    cur = g(z)
    trace = [cur]
    skipped = 0
    sweeps = 0
    stable = False
    while sweeps < max_sweeps:
        sweeps += 1
        improved = False
        for i in range(z.size):
            for k in range(K):
                if k == z[i]:
                    continue
                old = z[i]
                z[i] = k
                val = g(z)
                if not np.isfinite(val):
                    skipped += 1
                if val > cur + 1e-12 * max(1.0, abs(cur)) if np.isfinite(cur) else np.isfinite(val):
                    cur = val
                    improved = True
                else:
                    z[i] = old
        trace.append(cur)
        if not improved:
            stable = True
            break

    if not np.isfinite(cur):
        raise SearchError("no feasible labelling reached")
    theta = problem.profile_theta(z, data)
    return _result(
        problem, data, z, theta, problem.log_ideal_likelihood(theta, z, data),
        sweeps, stable, start, trace, skipped_candidates=skipped,
    )
