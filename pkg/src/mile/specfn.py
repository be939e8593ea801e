"""Log-gamma, digamma and trigamma on the positive real line.

All three use the same scheme: shift the argument upward with the
recurrence until it is at least ``_SHIFT_TO`` and then sum the
asymptotic (Bernoulli-number) series.  ``log_gamma`` additionally uses a
zeta-function Taylor series on [0.5, 2.5] so that it keeps relative
accuracy near its zeros at 1 and 2.

Scalars go through a pure-``math`` path (the optimizers call these in
tight loops); arrays are handled with numpy.
"""

import math

import numpy as np

__all__ = ["DomainError", "log_gamma", "digamma", "trigamma"]


class DomainError(ValueError):
    """Argument outside the positive real line."""


_SHIFT_TO = 10.0
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
_EULER_GAMMA = 0.57721566490153286061

# B_2k for k = 1..8
_BERNOULLI = (
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
    -3617.0 / 510.0,
)
# Stirling series coefficients B_2k / (2k (2k-1)) for powers x^-(2k-1)
_LGAMMA_COEF = tuple(b / (2 * k * (2 * k - 1)) for k, b in enumerate(_BERNOULLI, 1))
# digamma: B_2k / (2k) for powers x^-2k
_DIGAMMA_COEF = tuple(b / (2 * k) for k, b in enumerate(_BERNOULLI, 1))


def _zeta_minus_one(s, n_terms=12):
    # Euler-Maclaurin tail after n_terms explicit terms; exact to double
    # precision for s >= 2.
    n = float(n_terms)
    head = sum(j ** -s for j in range(2, n_terms))
    tail = n ** (1 - s) / (s - 1) + 0.5 * n ** -s
    fall = s
    power = n ** (-s - 1)
    for k, b in enumerate(_BERNOULLI[:6], 1):
        tail += b / math.factorial(2 * k) * fall * power
        fall *= (s + 2 * k - 1) * (s + 2 * k)
        power /= n * n
    return head + tail


# lnGamma(2 + e) = (1 - gamma) e + sum_k (-1)^k (zeta(k) - 1) e^k / k, |e| < 2
_SERIES_AT_TWO = tuple(
    (-1) ** k * _zeta_minus_one(k) / k for k in range(2, 40)
)


def _check_scalar(x):
    x = float(x)
    if not math.isfinite(x) or x <= 0.0:
        raise DomainError(f"argument must be finite and > 0, got {x!r}")
    return x


def _check_array(x):
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)) or np.any(x <= 0.0):
        bad = x[~(np.isfinite(x) & (x > 0.0))]
        raise DomainError(f"argument must be finite and > 0, got {bad.ravel()[0]!r}")
    return x


def _is_scalar(x):
    return np.ndim(x) == 0


# ---------------------------------------------------------------- log gamma


def _lgamma_series_two(e):
    acc = 0.0
    p = e * e
    for c in _SERIES_AT_TWO:
        acc += c * p
        p *= e
    return (1.0 - _EULER_GAMMA) * e + acc


def _lgamma_stirling(x):
    inv = 1.0 / x
    inv2 = inv * inv
    acc = 0.0
    p = inv
    for c in _LGAMMA_COEF:
        acc += c * p
        p *= inv2
    return (x - 0.5) * math.log(x) - x + _HALF_LOG_2PI + acc


def _log_gamma_scalar(x):
    if 1.5 <= x <= 2.5:
        return _lgamma_series_two(x - 2.0)
    if 0.5 <= x < 1.5:
        return _lgamma_series_two(x - 1.0) - math.log1p(x - 1.0)
    if x >= _SHIFT_TO:
        return _lgamma_stirling(x)
    prod = 1.0
    while x < _SHIFT_TO:
        prod *= x
        x += 1.0
    return _lgamma_stirling(x) - math.log(prod)


def _log_gamma_array(x):
    out = np.empty_like(x)
    near = (x >= 0.5) & (x <= 2.5)
    if near.any():
        xn = x[near]
        e = np.where(xn >= 1.5, xn - 2.0, xn - 1.0)
        acc = np.zeros_like(e)
        p = e * e
        for c in _SERIES_AT_TWO:
            acc += c * p
            p = p * e
        val = (1.0 - _EULER_GAMMA) * e + acc
        out[near] = np.where(xn >= 1.5, val, val - np.log1p(xn - 1.0))
    far = ~near
    if far.any():
        xf = x[far].copy()
        prod = np.ones_like(xf)
        while True:
            low = xf < _SHIFT_TO
            if not low.any():
                break
            prod[low] *= xf[low]
            xf[low] += 1.0
        inv = 1.0 / xf
        inv2 = inv * inv
        acc = np.zeros_like(xf)
        p = inv
        for c in _LGAMMA_COEF:
            acc += c * p
            p = p * inv2
        out[far] = (xf - 0.5) * np.log(xf) - xf + _HALF_LOG_2PI + acc - np.log(prod)
    return out


def log_gamma(x):
    """Natural log of the gamma function for x > 0."""
    if _is_scalar(x):
        return _log_gamma_scalar(_check_scalar(x))
    return _log_gamma_array(_check_array(x))


# ------------------------------------------------------------------ digamma


def _digamma_scalar(x):
    shift = 0.0
    while x < _SHIFT_TO:
        shift -= 1.0 / x
        x += 1.0
    inv2 = 1.0 / (x * x)
    acc = 0.0
    p = inv2
    for c in _DIGAMMA_COEF:
        acc += c * p
        p *= inv2
    return math.log(x) - 0.5 / x - acc + shift


def _digamma_array(x):
    x = x.copy()
    shift = np.zeros_like(x)
    while True:
        low = x < _SHIFT_TO
        if not low.any():
            break
        shift[low] -= 1.0 / x[low]
        x[low] += 1.0
    inv2 = 1.0 / (x * x)
    acc = np.zeros_like(x)
    p = inv2
    for c in _DIGAMMA_COEF:
        acc += c * p
        p = p * inv2
    return np.log(x) - 0.5 / x - acc + shift


def digamma(x):
    """Digamma function psi(x) = d/dx log Gamma(x) for x > 0."""
    if _is_scalar(x):
        return _digamma_scalar(_check_scalar(x))
    return _digamma_array(_check_array(x))


# ----------------------------------------------------------------- trigamma


def _trigamma_scalar(x):
    shift = 0.0
    while x < _SHIFT_TO:
        shift += 1.0 / (x * x)
        x += 1.0
    inv = 1.0 / x
    inv2 = inv * inv
    acc = 0.0
    p = inv2 * inv
    for b in _BERNOULLI:
        acc += b * p
        p *= inv2
    return inv + 0.5 * inv2 + acc + shift


def _trigamma_array(x):
    x = x.copy()
    shift = np.zeros_like(x)
    while True:
        low = x < _SHIFT_TO
        if not low.any():
            break
        shift[low] += 1.0 / (x[low] * x[low])
        x[low] += 1.0
    inv = 1.0 / x
    inv2 = inv * inv
    acc = np.zeros_like(x)
    p = inv2 * inv
    for b in _BERNOULLI:
        acc += b * p
        p = p * inv2
    return inv + 0.5 * inv2 + acc + shift


def trigamma(x):
    """First derivative of digamma for x > 0."""
    if _is_scalar(x):
        return _trigamma_scalar(_check_scalar(x))
    return _trigamma_array(_check_array(x))
