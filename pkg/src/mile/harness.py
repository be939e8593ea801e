"""Monte Carlo experiment driver, summaries and record persistence.

Every replicate draws its dataset from the stream
``(master_seed, rep, 0)`` and each fitting method gets its own stream
``(master_seed, rep, k)`` with a fixed k per method, so records do not
depend on which other methods ran, on worker count or on scheduling.
"""

from __future__ import annotations

import csv
import logging
import math
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .models import (
    DEFAULT_TRUE_PARAMS,
    bb_em_fit,
    bb_fit_mile,
    bsr_fit_mile,
    gmm_accuracy,
    gmm_em_fit,
    gmm_fit_mile,
    gmm_hard_labels,
    gmm_profile_theta,
    lc_fit_mile,
    lc_mom_fit,
    lc_mom_latent,
    simulate_dataset,
)
from .models.beta_bernoulli import bb_marginal_loglik
from .models.bsr import PARAM_NAMES as BSR_PARAM_NAMES
from .models.gmm import gmm_mixture_loglik
from .optim import BcaConfig, CubeSearchConfig
from .rand import derive_replicate_generator

__all__ = [
    "ConfigError",
    "RecordsFormatError",
    "METHODS",
    "MethodOutcome",
    "ExperimentConfig",
    "ReplicateRecord",
    "SummaryRow",
    "param_names",
    "parse_true_params",
    "fit_method",
    "replicate_dataset",
    "run_replicate",
    "run_experiment",
    "summarize",
    "format_summary",
    "bootstrap_median_sd",
    "write_records_csv",
    "read_records_csv",
    "write_summary_csv",
]

log = logging.getLogger(__name__)

METHODS = {
    "beta-bernoulli": ("mile", "em"),
    "log-cauchy": ("mile", "mom"),
    "gmm": ("mile", "em"),
    "bsr": ("mile",),
}
# fixed sub-stream per method; 0 is the dataset stream
_METHOD_STREAM = {"mile": 1, "em": 2, "mom": 3}
BOOTSTRAP_RESAMPLES = 500
BOOTSTRAP_SEED = 20240101


class ConfigError(ValueError):
    pass


class RecordsFormatError(ValueError):
    pass


# ------------------------------------------------------------ parameters


def param_names(model, K=3):
    if model in ("beta-bernoulli",):
        return ("theta",)
    if model == "log-cauchy":
        return ("mu",)
    if model == "gmm":
        return tuple(f"{p}_{k + 1}" for p in ("mu", "var", "pi") for k in range(K))
    if model == "bsr":
        return BSR_PARAM_NAMES
    raise ConfigError(f"unknown model {model!r}; expected one of {tuple(METHODS)}")


def parse_true_params(model, pairs=None):
    """Validate ``{key: value}`` (or ``["k=v", ...]``) against the model schema.

    GMM keys ``mu``, ``var`` and ``pi`` take comma-separated lists.
    Unspecified keys fall back to the model defaults.
    """
    if model not in METHODS:
        raise ConfigError(f"unknown model {model!r}; expected one of {tuple(METHODS)}")
    defaults = DEFAULT_TRUE_PARAMS[model]
    if isinstance(pairs, dict):
        given = dict(pairs)
    else:
        given = {}
        for item in pairs or ():
            key, sep, val = str(item).partition("=")
            if not sep:
                raise ConfigError(f"--true-params entry {item!r} is not of the form k=v")
            given[key.strip()] = val.strip()
    out = dict(defaults)
    for key, val in given.items():
        if key not in defaults:
            raise ConfigError(f"unknown parameter {key!r} for {model}; expected {tuple(defaults)}")
        try:
            if model == "gmm":
                vals = val.split(",") if isinstance(val, str) else list(val)
                out[key] = tuple(float(v) for v in vals)
            else:
                out[key] = float(val)
        except (TypeError, ValueError):
            raise ConfigError(f"parameter {key!r} has a non-numeric value {val!r}") from None
    if model == "gmm":
        sizes = {len(out[k]) for k in ("mu", "var", "pi")}
        if len(sizes) != 1 or sizes.pop() < 2:
            raise ConfigError("gmm mu, var and pi need the same length K >= 2")
        if any(v <= 0 for v in out["var"]) or any(p < 0 for p in out["pi"]) or abs(sum(out["pi"]) - 1) > 1e-9:
            raise ConfigError("gmm variances must be > 0 and pi a probability vector")
    elif model == "beta-bernoulli" and not out["theta"] > 0:
        raise ConfigError("theta must be > 0")
    elif model == "bsr" and not (out["alpha"] > 0 and out["beta"] > 0):
        raise ConfigError("alpha and beta must be > 0")
    for key, val in out.items():
        vals = val if isinstance(val, tuple) else (val,)
        if not all(math.isfinite(v) for v in vals):
            raise ConfigError(f"parameter {key!r} must be finite")
    return out


# ------------------------------------------------------------ config


@dataclass(frozen=True)
class ExperimentConfig:
    model: str
    # None selects every method available for the model
    methods: Optional[tuple] = None
    true_params: Optional[dict] = None
    N: int = 200
    M: int = 1000
    replicates: int = 200
    master_seed: int = 0
    workers: int = 1
    bca: BcaConfig = field(default_factory=BcaConfig)
    cube: CubeSearchConfig = field(default_factory=CubeSearchConfig)
    output: Optional[str] = None

    def __post_init__(self):
        if self.model not in METHODS:
            raise ConfigError(f"unknown model {self.model!r}; expected one of {tuple(METHODS)}")
        methods = METHODS[self.model] if self.methods is None else tuple(dict.fromkeys(self.methods))
        if not methods:
            raise ConfigError("at least one method is required")
        for m in methods:
            if m not in _METHOD_STREAM:
                raise ConfigError(f"unknown method {m!r}; expected one of {tuple(_METHOD_STREAM)}")
            if m not in METHODS[self.model]:
                raise ConfigError(f"{m} not available for {self.model}")
        object.__setattr__(self, "methods", methods)
        object.__setattr__(self, "true_params", parse_true_params(self.model, self.true_params))
        if self.N < 1 or self.M < 1 or self.replicates < 1:
            raise ConfigError("N, M and replicates must be >= 1")
        if self.model == "gmm" and self.M != 1:
            raise ConfigError("gmm data has exactly one observation per individual (M = 1)")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if not 0 <= int(self.master_seed) < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    @property
    def K(self):
        return len(self.true_params["mu"]) if self.model == "gmm" else None

    @property
    def param_names(self):
        return param_names(self.model, self.K or 3)


# ------------------------------------------------------------ fitting


@dataclass
class MethodOutcome:
    theta: np.ndarray
    z: Optional[np.ndarray]
    loglik: Optional[float]
    converged: bool
    iterations: int = 0


def _gmm_sorted(params, labels):
    order = np.argsort(params.means, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    return params.sorted(), rank[labels]


def fit_method(model, method, data, gen, K=3, bca=None, cube=None):
    """Fit one method to one dataset; GMM components come back sorted by mean."""
    if method not in METHODS.get(model, ()):
        raise ConfigError(f"{method} not available for {model}")
    if model == "beta-bernoulli":
        if method == "mile":
            res = bb_fit_mile(data, 1.0, bca)
            return MethodOutcome(res.theta.copy(), res.z.copy(), res.loglik, res.converged, res.iterations)
        em = bb_em_fit(data, 1.0)
        return MethodOutcome(np.array([em.params]), None, bb_marginal_loglik(data, em.params), em.converged, em.iterations)
    if model == "log-cauchy":
        if method == "mile":
            res = lc_fit_mile(data, bca)
            return MethodOutcome(res.theta.copy(), res.z.copy(), res.loglik, res.converged, res.iterations)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            z = lc_mom_latent(data)
            mu = lc_mom_fit(data)
        return MethodOutcome(np.array([mu]), z, None, True, 1)
    if model == "gmm":
        if method == "mile":
            res = gmm_fit_mile(data, K, gen)
            params = gmm_profile_theta(data, res.z, K)
            params, labels = _gmm_sorted(params, res.z)
            return MethodOutcome(params.as_vector(), labels, res.loglik, res.converged, res.iterations)
        em = gmm_em_fit(data, K, gen=gen)
        params, labels = _gmm_sorted(em.params, gmm_hard_labels(data, em.params))
        return MethodOutcome(params.as_vector(), labels, gmm_mixture_loglik(data, params), em.converged, em.iterations)
    if model == "bsr":
        res = bsr_fit_mile(data, cube, gen)
        return MethodOutcome(res.theta.copy(), res.z.copy(), res.loglik, res.converged, res.iterations)
    raise ConfigError(f"unknown model {model!r}")


# ------------------------------------------------------------ records


@dataclass(frozen=True)
class ReplicateRecord:
    model: str
    method: str
    N: int
    M: int
    rep: int
    theta: tuple
    loglik: Optional[float] = None
    dz_mean: Optional[float] = None
    dz_median: Optional[float] = None
    dz_sd: Optional[float] = None
    accuracy: Optional[float] = None
    time_ms: Optional[float] = None
    converged: bool = True


def _f(v):
    return None if v is None else float(v)


def replicate_dataset(cfg, rep):
    """The (dataset, true latents) pair that replicate ``rep`` of ``cfg`` fits."""
    gen = derive_replicate_generator(cfg.master_seed, rep, 0)
    return simulate_dataset(cfg.model, cfg.true_params, cfg.N, cfg.M, gen)


def run_replicate(cfg, rep):
    """All requested methods on replicate ``rep``; failures become unconverged records."""
    data, z_true = replicate_dataset(cfg, rep)
    p = len(cfg.param_names)
    out = []
    for method in cfg.methods:
        gen = derive_replicate_generator(cfg.master_seed, rep, _METHOD_STREAM[method])
        start = time.perf_counter()
        try:
            res = fit_method(cfg.model, method, data, gen, cfg.K or 3, cfg.bca, cfg.cube)
        except Exception as exc:  # a failed replicate must not abort the batch
            log.warning("%s/%s replicate %d failed: %s", cfg.model, method, rep, exc)
            out.append(ReplicateRecord(cfg.model, method, cfg.N, cfg.M, rep, (None,) * p, converged=False,
                                       time_ms=(time.perf_counter() - start) * 1e3))
            continue
        elapsed = (time.perf_counter() - start) * 1e3
        dz_mean = dz_median = dz_sd = accuracy = None
        if cfg.model == "gmm":
            accuracy = gmm_accuracy(res.z, z_true, cfg.K)
        elif res.z is not None:
            dz = res.z - z_true
            dz = dz[np.isfinite(dz)]
            if dz.size:
                # log-Cauchy truths have tails near the float limit; inf is an honest answer there
                with np.errstate(over="ignore", invalid="ignore"):
                    dz_mean, dz_median = float(np.mean(dz)), float(np.median(dz))
                    dz_sd = float(np.std(dz, ddof=1)) if dz.size > 1 else None
        out.append(ReplicateRecord(
            cfg.model, method, cfg.N, cfg.M, rep,
            tuple(float(v) for v in res.theta), _f(res.loglik),
            dz_mean, dz_median, dz_sd, accuracy, elapsed, bool(res.converged),
        ))
    return out


def _run_chunk(args):
    cfg, reps = args
    os.environ.setdefault("OMP_NUM_THREADS", "1")
    return [r for rep in reps for r in run_replicate(cfg, rep)]


def run_experiment(cfg):
    """Records for every (method, replicate), sorted by method then replicate."""
    reps = list(range(cfg.replicates))
    if cfg.workers == 1 or cfg.replicates == 1:
        records = [r for rep in reps for r in run_replicate(cfg, rep)]
    else:
        n_chunks = min(cfg.replicates, cfg.workers * 4)
        chunks = [reps[k::n_chunks] for k in range(n_chunks)]
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            records = [r for part in pool.map(_run_chunk, [(cfg, c) for c in chunks]) for r in part]
    records.sort(key=lambda r: (r.method, r.rep))
    if cfg.output:
        write_records_csv(records, cfg.output, include_timing=False)
    return records


# ------------------------------------------------------------ summaries


@dataclass(frozen=True)
class SummaryRow:
    model: str
    method: str
    N: int
    M: int
    n: int
    param_names: tuple
    est: tuple
    sd: tuple
    dz_mean: Optional[float]
    dz_sd: Optional[float]
    dz_median: Optional[float]
    dz_median_boot_sd: Optional[float]
    accuracy: Optional[float]
    accuracy_sd: Optional[float]
    time_ms: Optional[float]
    converged: float


def _mean(vals):
    vals = [v for v in vals if v is not None]
    with np.errstate(over="ignore", invalid="ignore"):
        return float(np.mean(vals)) if vals else None


def _sd(vals):
    vals = [v for v in vals if v is not None]
    return float(np.std(vals, ddof=1)) if len(vals) > 1 else (0.0 if vals else None)


def bootstrap_median_sd(values, n_resamples=BOOTSTRAP_RESAMPLES, seed=BOOTSTRAP_SEED):
    """Standard deviation of the median over bootstrap resamples of ``values``."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return None
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, v.size, size=(n_resamples, v.size))
    return float(np.std(np.median(v[idx], axis=1), ddof=1))


def summarize(records, names=None):
    """One row per (model, method, N, M).

    Est and Sd are the mean and sample standard deviation (n - 1) of each
    estimate over replicates; dz_mean is the mean of per-replicate mean
    errors, dz_sd the mean within-replicate sd, dz_median the median of the
    per-replicate medians with its bootstrap sd (replicates resampled).
    """
    if not records:
        raise ValueError("no records to summarize")
    groups = {}
    for r in records:
        groups.setdefault((r.model, r.method, r.N, r.M), []).append(r)
    rows = []
    for (model, method, N, M), recs in sorted(groups.items()):
        ok = [r for r in recs if r.theta and r.theta[0] is not None]
        p = len(recs[0].theta)
        if names is None:
            K = p // 3 if model == "gmm" else 3
            pn = param_names(model, K)
        else:
            pn = tuple(names)
        thetas = np.array([r.theta for r in ok], dtype=float).reshape(len(ok), p)
        est = tuple(float(v) for v in thetas.mean(axis=0)) if ok else (None,) * p
        sd = tuple(float(v) for v in thetas.std(axis=0, ddof=1)) if len(ok) > 1 else ((0.0,) * p if ok else (None,) * p)
        meds = [r.dz_median for r in ok if r.dz_median is not None]
        rows.append(SummaryRow(
            model, method, N, M, len(ok), pn, est, sd,
            _mean(r.dz_mean for r in ok), _mean(r.dz_sd for r in ok),
            float(np.median(meds)) if meds else None, bootstrap_median_sd(meds) if meds else None,
            _mean(r.accuracy for r in ok), _sd([r.accuracy for r in ok]) if any(r.accuracy is not None for r in ok) else None,
            _mean(r.time_ms for r in recs), float(np.mean([r.converged for r in recs])),
        ))
    return rows


def _fmt(v, spec=".4f"):
    return "" if v is None else format(v, spec)


def format_summary(rows):
    lines = []
    for row in rows:
        lines.append(f"{row.model}  method={row.method}  N={row.N}  M={row.M}  replicates={row.n}  converged={row.converged:.0%}")
        width = max(len(n) for n in row.param_names)
        for name, e, s in zip(row.param_names, row.est, row.sd):
            lines.append(f"  {name:<{width}}  Est {_fmt(e):>10}  Sd {_fmt(s):>9}")
        if row.dz_mean is not None:
            lines.append(f"  dZ mean {_fmt(row.dz_mean)}  Sd dZ {_fmt(row.dz_sd)}  dZ median {_fmt(row.dz_median)}"
                         f"  (bootstrap Sd {_fmt(row.dz_median_boot_sd)})")
        if row.accuracy is not None:
            lines.append(f"  accuracy {_fmt(row.accuracy)}  Sd {_fmt(row.accuracy_sd)}")
        if row.time_ms is not None:
            lines.append(f"  time per fit {row.time_ms / 1e3:.4f} s")
    return "\n".join(lines)


def write_summary_csv(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "method", "N", "M", "replicates", "quantity", "value"])
        for row in rows:
            base = [row.model, row.method, row.N, row.M, row.n]
            for name, e, s in zip(row.param_names, row.est, row.sd):
                w.writerow(base + [f"Est {name}", _num(e)])
                w.writerow(base + [f"Sd {name}", _num(s)])
            for label, v in (("dZ", row.dz_mean), ("Sd dZ", row.dz_sd), ("dZ median", row.dz_median),
                             ("Sd dZ median", row.dz_median_boot_sd), ("Accuracy", row.accuracy),
                             ("Sd Accuracy", row.accuracy_sd), ("time_ms", row.time_ms)):
                if v is not None:
                    w.writerow(base + [label, _num(v)])


# ------------------------------------------------------------ CSV


_FIXED_HEAD = ("model", "method", "N", "M", "rep")
_FIXED_TAIL = ("loglik", "dz_mean", "dz_median", "dz_sd", "accuracy", "time_ms", "converged")


def _num(v):
    return "" if v is None else format(float(v), ".17g")


def write_records_csv(records, path, include_timing=True, n_params=None):
    """Write records with reals at 17 significant digits.

    ``include_timing=False`` leaves time_ms empty so that reruns produce
    byte-identical files.
    """
    if n_params is None:
        n_params = len(records[0].theta) if records else 0
    header = list(_FIXED_HEAD) + [f"theta_{k + 1}" for k in range(n_params)] + list(_FIXED_TAIL)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in records:
            if len(r.theta) != n_params:
                raise ValueError("records disagree on the number of parameters")
            w.writerow(
                [r.model, r.method, r.N, r.M, r.rep]
                + [_num(v) for v in r.theta]
                + [_num(r.loglik), _num(r.dz_mean), _num(r.dz_median), _num(r.dz_sd), _num(r.accuracy),
                   _num(r.time_ms if include_timing else None), "true" if r.converged else "false"]
            )


def read_records_csv(path):
    def opt(s):
        return None if s == "" else float(s)

    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise RecordsFormatError(f"{path}: empty file") from None
        n_params = len(header) - len(_FIXED_HEAD) - len(_FIXED_TAIL)
        expected = list(_FIXED_HEAD) + [f"theta_{k + 1}" for k in range(max(n_params, 0))] + list(_FIXED_TAIL)
        if header != expected:
            raise RecordsFormatError(f"{path}:1: unexpected header {header}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise RecordsFormatError(f"{path}:{lineno}: expected {len(header)} columns, got {len(row)}")
            try:
                head, theta, tail = row[:5], row[5:5 + n_params], row[5 + n_params:]
                if tail[-1] not in ("true", "false"):
                    raise ValueError(f"converged must be true/false, got {tail[-1]!r}")
                records.append(ReplicateRecord(
                    head[0], head[1], int(head[2]), int(head[3]), int(head[4]),
                    tuple(opt(v) for v in theta),
                    *(opt(v) for v in tail[:-1]),
                    converged=tail[-1] == "true",
                ))
            except ValueError as exc:
                raise RecordsFormatError(f"{path}:{lineno}: {exc}") from None
    return records
