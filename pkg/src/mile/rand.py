"""Seeded, splittable random streams and the samplers used by the simulations.

Every replicate of an experiment gets its own stream derived from
``(master_seed, replicate_index, *substream)`` through numpy's
``SeedSequence`` spawn keys, backed by the counter-based Philox
bit generator.  A stream therefore never depends on how many other
replicates were drawn before it, or in which process.
"""

from dataclasses import dataclass
from typing import Union

import numpy as np

__all__ = [
    "SeededGenerator",
    "derive_replicate_generator",
    "make_generator",
    "Beta",
    "Bernoulli",
    "Normal",
    "LogCauchy",
    "Poisson",
    "Gamma",
    "Categorical",
    "sample",
]

SeededGenerator = np.random.Generator

_SEED_MAX = 2**64 - 1


def _check_seed(seed):
    seed = int(seed)
    if not 0 <= seed <= _SEED_MAX:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def make_generator(seed, *spawn_key):
    """Philox generator for ``seed`` and an optional spawn key path."""
    ss = np.random.SeedSequence(_check_seed(seed), spawn_key=tuple(int(k) for k in spawn_key))
    return np.random.Generator(np.random.Philox(ss))


def derive_replicate_generator(master_seed, replicate_index, *substream):
    """Independent stream for one replicate (and optionally a sub-stream of it).

    ``substream`` lets each fitting method of a replicate draw its own
    algorithmic noise while sharing the replicate's dataset.
    """
    if replicate_index < 0:
        raise ValueError("replicate_index must be >= 0")
    return make_generator(master_seed, replicate_index, *substream)


# -------------------------------------------------------------- distributions


@dataclass(frozen=True)
class Beta:
    a: float
    b: float

    def validate(self):
        if not (np.all(np.asarray(self.a) > 0) and np.all(np.asarray(self.b) > 0)):
            raise ValueError(f"Beta parameters must be > 0, got ({self.a}, {self.b})")


@dataclass(frozen=True)
class Bernoulli:
    p: float

    def validate(self):
        if not np.all((np.asarray(self.p) >= 0.0) & (np.asarray(self.p) <= 1.0)):
            raise ValueError(f"Bernoulli p must lie in [0, 1], got {self.p}")


@dataclass(frozen=True)
class Normal:
    mean: float
    sd: float

    def validate(self):
        if not np.all(np.asarray(self.sd) > 0):
            raise ValueError(f"Normal sd must be > 0, got {self.sd}")


@dataclass(frozen=True)
class LogCauchy:
    """exp of a Cauchy(mu, scale) variate."""

    mu: float
    scale: float

    def validate(self):
        if not np.all(np.asarray(self.scale) > 0):
            raise ValueError(f"log-Cauchy scale must be > 0, got {self.scale}")


@dataclass(frozen=True)
class Poisson:
    lam: float

    def validate(self):
        if not np.all(np.asarray(self.lam) > 0):
            raise ValueError(f"Poisson rate must be > 0, got {self.lam}")


@dataclass(frozen=True)
class Gamma:
    shape: float
    scale: float = 1.0

    def validate(self):
        if not (self.shape > 0 and self.scale > 0):
            raise ValueError("Gamma shape and scale must be > 0")


@dataclass(frozen=True)
class Categorical:
    probs: tuple

    def validate(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or p.size < 1 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError("Categorical probs must be nonnegative and sum to 1")


DistributionSpec = Union[Beta, Bernoulli, Normal, LogCauchy, Poisson, Gamma, Categorical]


def sample(gen, dist, size=None):
    """Draw from ``dist`` using generator ``gen``.

    Returns a Python scalar when ``size`` is None, else an ndarray.
    Poisson and Bernoulli draws are integers.
    """
    dist.validate()
    if isinstance(dist, Beta):
        # ratio of gammas (Marsaglia-Tsang inside numpy's gamma sampler)
        g1 = gen.standard_gamma(dist.a, size)
        g2 = gen.standard_gamma(dist.b, size)
        out = g1 / (g1 + g2)
    elif isinstance(dist, Bernoulli):
        out = (gen.random(size) < dist.p).astype(np.int64) if size is not None else int(gen.random() < dist.p)
    elif isinstance(dist, Normal):
        out = dist.mean + dist.sd * gen.standard_normal(size)
    elif isinstance(dist, LogCauchy):
        out = np.exp(dist.mu + dist.scale * gen.standard_cauchy(size))
    elif isinstance(dist, Poisson):
        out = gen.poisson(dist.lam, size)
    elif isinstance(dist, Gamma):
        out = dist.scale * gen.standard_gamma(dist.shape, size)
    elif isinstance(dist, Categorical):
        out = gen.choice(len(dist.probs), size=size, p=np.asarray(dist.probs, dtype=float))
    else:
        raise TypeError(f"unknown distribution {dist!r}")
    if size is None and isinstance(out, np.generic):
        return out.item()
    return out
