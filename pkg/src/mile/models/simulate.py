"""Data generators for the four simulation designs."""

from __future__ import annotations

import numpy as np

from ..core import GroupedDataset
from ..rand import Bernoulli, Beta, Categorical, LogCauchy, Normal, Poisson, sample
from .bsr import PRIOR_BOUNDS, default_timestamps
from .log_cauchy import RATE

__all__ = ["MODEL_NAMES", "DEFAULT_TRUE_PARAMS", "simulate_dataset"]

MODEL_NAMES = ("beta-bernoulli", "log-cauchy", "gmm", "bsr")

DEFAULT_TRUE_PARAMS = {
    "beta-bernoulli": {"theta": 5.0},
    "log-cauchy": {"mu": 2.0},
    "gmm": {
        "mu": (-3.0, 0.0, 3.0),
        "var": (1.0, 1.0, 1.0),
        "pi": (0.3, 0.5, 0.2),
    },
    "bsr": {"alpha": 5.0, "beta": 5.0, "beta1": 1.0, "beta2": -1.0, "a": 1.0},
}


def _positive(name, value):
    if not (np.isfinite(value) and value > 0):
        raise ValueError(f"{name} must be finite and > 0, got {value}")


def simulate_dataset(model, true_params, N, M, gen):
    """Draw Z from its prior and X given Z; returns ``(dataset, true_z)``.

    ``model`` is one of MODEL_NAMES.  GMM data always has one observation per
    individual and ``true_z`` holds 0-based component labels; BSR data uses
    horizon T = 1 and timestamps (j - 0.5) / M.
    """
    if N < 1 or M < 1:
        raise ValueError("N and M must be >= 1")
    p = {**DEFAULT_TRUE_PARAMS.get(model, {}), **(true_params or {})}
    if model == "beta-bernoulli":
        theta = float(p["theta"])
        _positive("theta", theta)
        z = sample(gen, Beta(theta, theta), N)
        x = sample(gen, Bernoulli(z[:, None]), (N, M))
        return GroupedDataset(x.astype(float)), z
    if model == "log-cauchy":
        mu = float(p["mu"])
        if not np.isfinite(mu):
            raise ValueError("mu must be finite")
        with np.errstate(over="ignore"):
            z = sample(gen, LogCauchy(mu, 1.0), N)
        z = np.minimum(z, np.finfo(float).max)
        x = sample(gen, Normal(np.exp(-RATE * z)[:, None], 1.0), (N, M))
        return GroupedDataset(x), z
    if model == "gmm":
        mu, var, pi = (np.asarray(p[k], dtype=float) for k in ("mu", "var", "pi"))
        if not (mu.size == var.size == pi.size):
            raise ValueError("mu, var and pi need the same length")
        if np.any(var <= 0):
            raise ValueError("variances must be > 0")
        labels = sample(gen, Categorical(tuple(pi)), N)
        x = sample(gen, Normal(mu[labels], np.sqrt(var[labels])), N)
        return GroupedDataset(x[:, None]), labels.astype(np.int64)
    if model == "bsr":
        alpha, beta = float(p["alpha"]), float(p["beta"])
        lo, hi = PRIOR_BOUNDS
        if not (lo <= alpha <= hi and lo <= beta <= hi):
            raise ValueError(f"alpha and beta must lie in [{lo}, {hi}]")
        b1, b2, a = (float(p[k]) for k in ("beta1", "beta2", "a"))
        t = default_timestamps(M)
        z = sample(gen, Beta(alpha, beta), N)
        # keep z strictly inside (0, 1) even for extreme prior draws
        z = np.clip(z, 1e-12, 1 - 1e-12)
        d = t[None, :] - z[:, None]
        lam = np.exp(np.where(t[None, :] < z[:, None], b1, b2) * d + a)
        x = sample(gen, Poisson(lam), (N, M))
        return GroupedDataset(x.astype(float), t, 1.0), z
    raise ValueError(f"unknown model {model!r}; expected one of {MODEL_NAMES}")
