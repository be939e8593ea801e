"""Problem abstraction shared by every model and optimizer.

A model is an :class:`IdealLikelihoodProblem`: it evaluates the log of the
complete-data ("ideal") likelihood l(theta, Z; X) for a parameter vector
theta and latent vector Z, and may optionally expose gradients and exact
block maximizers.  Parameters and latents travel through the optimizers
as plain float/int ndarrays; :class:`ParameterVector` and
:class:`LatentVector` wrap them at API boundaries with their domains.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "CLAMP_EPS",
    "INFEASIBLE",
    "is_feasible",
    "DataError",
    "Interval",
    "ParamDomain",
    "ParameterVector",
    "LatentSpace",
    "ContinuousBox",
    "CategoricalSpace",
    "LatentVector",
    "GroupedDataset",
    "IdealLikelihoodProblem",
    "provides",
    "FitResult",
    "CheckFailure",
    "ValidationReport",
    "central_gradient",
    "validate_problem",
    "read_dataset_csv",
    "write_dataset_csv",
]

CLAMP_EPS = 1e-12

# -inf orders below every finite fitness and never turns into NaN under
# max/sort, which is all the search optimizers need from it.
INFEASIBLE = -math.inf


def is_feasible(value):
    return value > INFEASIBLE and not math.isnan(value)


class DataError(ValueError):
    """Malformed dataset (bad shape, bad CSV row, violated invariant)."""


# ------------------------------------------------------------------ domains


@dataclass(frozen=True)
class Interval:
    lower: float = -math.inf
    upper: float = math.inf
    closed_lower: bool = False
    closed_upper: bool = False

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValueError(f"interval needs lower < upper, got [{self.lower}, {self.upper}]")

    def contains(self, x):
        lo_ok = x >= self.lower if self.closed_lower else x > self.lower
        hi_ok = x <= self.upper if self.closed_upper else x < self.upper
        return bool(lo_ok and hi_ok)


@dataclass(frozen=True)
class ParamDomain:
    names: tuple
    intervals: tuple

    def __post_init__(self):
        if len(self.names) != len(self.intervals):
            raise ValueError("one interval per parameter name is required")

    @property
    def size(self):
        return len(self.names)

    def contains(self, values):
        return all(iv.contains(v) for iv, v in zip(self.intervals, values))

    def clip(self, values):
        out = np.array(values, dtype=float)
        for k, iv in enumerate(self.intervals):
            lo = iv.lower if iv.closed_lower or not math.isfinite(iv.lower) else iv.lower + CLAMP_EPS
            hi = iv.upper if iv.closed_upper or not math.isfinite(iv.upper) else iv.upper - CLAMP_EPS
            out[k] = min(max(out[k], lo), hi)
        return out


@dataclass(frozen=True, eq=False)
class ParameterVector:
    values: np.ndarray
    domain: ParamDomain

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if v.size != self.domain.size:
            raise ValueError(f"expected {self.domain.size} parameters, got {v.size}")
        if not self.domain.contains(v):
            raise ValueError(f"parameters {dict(zip(self.domain.names, v))} outside their domain")

    def as_dict(self):
        return {n: float(v) for n, v in zip(self.domain.names, self.values)}

    def __eq__(self, other):
        return (
            isinstance(other, ParameterVector)
            and self.domain == other.domain
            and np.array_equal(self.values, other.values)
        )


class LatentSpace:
    """Base class for the support of the latent vector."""

    dim: int

    def contains(self, z):
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class ContinuousBox(LatentSpace):
    """Product of per-coordinate intervals, open unless ``closed`` is set."""

    lower: np.ndarray
    upper: np.ndarray
    closed: bool = False

    def __post_init__(self):
        lo = np.array(self.lower, dtype=float).reshape(-1)
        hi = np.array(self.upper, dtype=float).reshape(-1)
        if lo.shape != hi.shape:
            raise ValueError("lower and upper bounds differ in length")
        if not np.all(lo < hi):
            raise ValueError("every coordinate needs lower < upper")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def uniform(cls, dim, lower, upper, closed=False):
        return cls(np.full(dim, float(lower)), np.full(dim, float(upper)), closed)

    @property
    def dim(self):
        return self.lower.size

    @property
    def is_finite(self):
        return bool(np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper)))

    def clamp(self, z):
        """Clip into the box; open finite ends are pulled in by CLAMP_EPS."""
        z = np.asarray(z, dtype=float)
        if self.closed:
            return np.clip(z, self.lower, self.upper)
        lo = np.where(np.isfinite(self.lower), self.lower + CLAMP_EPS, self.lower)
        hi = np.where(np.isfinite(self.upper), self.upper - CLAMP_EPS, self.upper)
        return np.clip(z, lo, hi)

    def contains(self, z):
        z = np.asarray(z, dtype=float)
        if z.shape != self.lower.shape:
            return False
        if self.closed:
            return bool(np.all((z >= self.lower) & (z <= self.upper)))
        return bool(np.all((z > self.lower) & (z < self.upper)))

    def __eq__(self, other):
        return (
            isinstance(other, ContinuousBox)
            and self.closed == other.closed
            and np.array_equal(self.lower, other.lower)
            and np.array_equal(self.upper, other.upper)
        )


@dataclass(frozen=True)
class CategoricalSpace(LatentSpace):
    """``dim`` labels, each in {0, ..., n_categories - 1}."""

    n_categories: int
    dim: int

    def __post_init__(self):
        if self.n_categories < 2:
            raise ValueError("a categorical latent space needs K >= 2")
        if self.dim < 1:
            raise ValueError("latent dimension must be >= 1")

    def contains(self, z):
        z = np.asarray(z)
        return (
            z.shape == (self.dim,)
            and np.issubdtype(z.dtype, np.integer)
            and bool(np.all((z >= 0) & (z < self.n_categories)))
        )


@dataclass(frozen=True, eq=False)
class LatentVector:
    values: np.ndarray
    space: LatentSpace

    def __post_init__(self):
        if isinstance(self.space, CategoricalSpace):
            v = np.array(self.values, dtype=np.int64).reshape(-1)
        else:
            v = np.array(self.values, dtype=float).reshape(-1)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if not self.space.contains(v):
            raise ValueError("latent values outside their declared space")

    def __eq__(self, other):
        return (
            isinstance(other, LatentVector)
            and self.space == other.space
            and np.array_equal(self.values, other.values)
        )


# ------------------------------------------------------------------ dataset


@dataclass(frozen=True, eq=False)
class GroupedDataset:
    """N individuals with M observations each (row i = individual i).

    ``timestamps``/``horizon`` are only used by the segmented-regression
    model, where column j is observed at time ``timestamps[j]``.
    """

    values: np.ndarray
    timestamps: Optional[np.ndarray] = None
    horizon: Optional[float] = None

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2:
            raise DataError("values must be an (N, M) array")
        if v.shape[0] < 1:
            raise DataError("dataset needs at least one individual")
        if v.shape[1] < 1:
            raise DataError("every individual needs at least one observation")
        if not np.all(np.isfinite(v)):
            raise DataError("observations must be finite")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if self.timestamps is not None:
            t = np.array(self.timestamps, dtype=float).reshape(-1)
            if t.size != v.shape[1]:
                raise DataError("need one timestamp per observation column")
            if self.horizon is None:
                raise DataError("timestamps require a horizon")
            if np.any(np.diff(t) <= 0):
                raise DataError("timestamps must be strictly increasing")
            if t[0] <= 0 or t[-1] >= self.horizon:
                raise DataError("timestamps must lie strictly inside (0, horizon)")
            t.setflags(write=False)
            object.__setattr__(self, "timestamps", t)
            object.__setattr__(self, "horizon", float(self.horizon))

    @property
    def n_individuals(self):
        return self.values.shape[0]

    @property
    def obs_per_individual(self):
        return self.values.shape[1]

    @cached_property
    def row_sums(self):
        return self.values.sum(axis=1)

    @cached_property
    def row_means(self):
        return self.values.mean(axis=1)

    def subset(self, index):
        """Dataset restricted to the individuals in ``index``."""
        return GroupedDataset(self.values[np.asarray(index)], self.timestamps, self.horizon)

    def drop(self, i):
        keep = np.arange(self.n_individuals) != i
        return self.subset(keep)


# ------------------------------------------------------------------ problem


class IdealLikelihoodProblem:
    """Contract implemented by each model.

    Required:
        ``param_domain(data)``, ``latent_space(data)``,
        ``log_ideal_likelihood(theta, z, data)`` and
        ``random_interior_point(data, rng)``.

    Optional (detected with :func:`provides`):
        ``grad_theta(theta, z, data)``, ``grad_z(theta, z, data)``,
        ``profile_theta(z, data, theta0=None)`` - exact argmax over theta
        given z, returning None when z is infeasible,
        ``update_z(theta, data, z0=None)`` - exact argmax over z,
        ``profile_fitness(z, data)`` - shortcut for
        ``l(profile_theta(z), z)``,
        ``profile_fitness_batch(zs, data)`` - the same for a stack of
        candidates, returning ``(fitness, thetas)``.
    """

    name = "problem"
    param_names: tuple = ()

    def param_domain(self, data):
        raise NotImplementedError

    def latent_space(self, data):
        raise NotImplementedError

    def log_ideal_likelihood(self, theta, z, data):
        raise NotImplementedError

    def random_interior_point(self, data, rng):
        raise NotImplementedError


def provides(problem, name):
    return callable(getattr(problem, name, None))


@dataclass(frozen=True, eq=False)
class FitResult:
    theta_hat: ParameterVector
    z_hat: LatentVector
    loglik: float
    iterations: int
    converged: bool
    wall_time_ms: float
    trace: tuple = ()
    info: dict = field(default_factory=dict)

    @property
    def theta(self):
        return self.theta_hat.values

    @property
    def z(self):
        return self.z_hat.values


# --------------------------------------------------------------- validation


def central_gradient(f, x, rel_step=None):
    """Fourth-order central-difference gradient of scalar ``f`` at ``x``."""
    x = np.asarray(x, dtype=float)
    if rel_step is None:
        rel_step = np.finfo(float).eps ** 0.2
    g = np.empty_like(x)
    for k in range(x.size):
        h = rel_step * max(1.0, abs(x[k]))
        e = np.zeros_like(x)
        e[k] = h
        g[k] = (-f(x + 2 * e) + 8 * f(x + e) - 8 * f(x - e) + f(x - 2 * e)) / (12 * h)
    return g


def _rel_err(a, b):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1.0)


@dataclass(frozen=True)
class CheckFailure:
    check: str
    point: int
    coordinate: int
    magnitude: float


@dataclass
class ValidationReport:
    checks_run: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.failures

    def failed(self, check):
        return [f for f in self.failures if f.check == check]


def validate_problem(problem, data, n_points=100, rng=None, rel_tol=1e-6, profile_trials=100):
    """Check analytic gradients and profile maximizers of ``problem``.

    Gradients are compared with finite differences at ``n_points`` random
    interior points; ``profile_theta`` is compared against random
    perturbations of its own output.  Nothing is raised for a failing
    check; each failure is recorded with its location and size.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    report = ValidationReport()
    ll = problem.log_ideal_likelihood

    for name in ("grad_theta", "grad_z"):
        if not provides(problem, name):
            continue
        grad = getattr(problem, name)
        report.checks_run[name] = n_points
        for p in range(n_points):
            theta, z = problem.random_interior_point(data, rng)
            if name == "grad_theta":
                num = central_gradient(lambda t: ll(t, z, data), theta)
            else:
                num = central_gradient(lambda zz: ll(theta, zz, data), z)
            ana = np.asarray(grad(theta, z, data), dtype=float)
            err = _rel_err(ana, num)
            for k in np.flatnonzero(~(err < rel_tol)):
                report.failures.append(CheckFailure(name, p, int(k), float(err[k])))

    if provides(problem, "profile_theta"):
        report.checks_run["profile_theta"] = n_points
        for p in range(n_points):
            theta, z = problem.random_interior_point(data, rng)
            best = problem.profile_theta(z, data)
            if best is None:
                continue
            top = ll(best, z, data)
            domain = problem.param_domain(data)
            for _ in range(profile_trials):
                trial = domain.clip(best * (1.0 + 0.05 * rng.standard_normal(best.size)))
                val = ll(trial, z, data)
                if val > top + 1e-8:
                    report.failures.append(CheckFailure("profile_theta", p, -1, float(val - top)))
                    break
    return report


# ------------------------------------------------------------------ CSV I/O


def write_dataset_csv(data, path, timed=None):
    """Write ``data`` in long format.

    Columns are ``individual_id,obs_index,value``, or
    ``individual_id,t,value`` when the dataset carries timestamps.
    """
    timed = data.timestamps is not None if timed is None else timed
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["individual_id", "t" if timed else "obs_index", "value"])
        integral = np.all(np.equal(np.mod(data.values, 1), 0))
        for i, row in enumerate(data.values):
            for j, x in enumerate(row):
                key = format(data.timestamps[j], ".17g") if timed else j
                val = str(int(x)) if integral else format(float(x), ".17g")
                w.writerow([i, key, val])


def read_dataset_csv(path, horizon=None):
    """Parse a long-format dataset file.

    Raises :class:`DataError` naming the offending line for malformed rows,
    duplicate keys or ragged individuals.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if header == ["individual_id", "obs_index", "value"]:
            timed = False
        elif header == ["individual_id", "t", "value"]:
            timed = True
        else:
            raise DataError(f"{path}:1: unexpected header {header}")
        cells = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 columns, got {len(row)}")
            try:
                i = int(row[0])
                key = float(row[1]) if timed else int(row[1])
                x = float(row[2])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            if (i, key) in cells:
                raise DataError(f"{path}:{lineno}: duplicate entry for ({row[0]}, {row[1]})")
            cells[(i, key)] = x
    if not cells:
        raise DataError(f"{path}: no observations")
    ids = sorted({i for i, _ in cells})
    keys = sorted({k for _, k in cells})
    if len(cells) != len(ids) * len(keys):
        raise DataError(f"{path}: individuals do not share the same observation set")
    values = np.empty((len(ids), len(keys)))
    pos_i = {v: n for n, v in enumerate(ids)}
    pos_k = {v: n for n, v in enumerate(keys)}
    for (i, k), x in cells.items():
        values[pos_i[i], pos_k[k]] = x
    if timed:
        return GroupedDataset(values, np.array(keys, dtype=float), 1.0 if horizon is None else horizon)
    return GroupedDataset(values)
