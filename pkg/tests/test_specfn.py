import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mile.specfn import DomainError, digamma, log_gamma, trigamma
from oracles import mp_digamma, mp_loggamma, mp_trigamma

EULER = 0.5772156649015329
positive = st.floats(min_value=1e-8, max_value=1e8, allow_nan=False, allow_infinity=False)


def test_log_gamma_known_values():
    assert log_gamma(1.0) == pytest.approx(0.0, abs=1e-15)
    assert log_gamma(2.0) == pytest.approx(0.0, abs=1e-15)
    assert log_gamma(0.5) == pytest.approx(0.5 * math.log(math.pi), rel=1e-14)


def test_digamma_known_values():
    assert digamma(1.0) == pytest.approx(-EULER, rel=1e-14)
    assert digamma(2.0) == pytest.approx(1.0 - EULER, rel=1e-14)
    assert digamma(0.5) == pytest.approx(-EULER - 2 * math.log(2), rel=1e-14)


def test_trigamma_known_values():
    assert trigamma(1.0) == pytest.approx(math.pi**2 / 6, rel=1e-14)
    assert trigamma(0.5) == pytest.approx(math.pi**2 / 2, rel=1e-14)
    assert trigamma(2.0) == pytest.approx(math.pi**2 / 6 - 1, rel=1e-14)


@settings(max_examples=300, deadline=None)
@given(positive)
def test_against_arbitrary_precision(x):
    assert log_gamma(x) == pytest.approx(mp_loggamma(x), rel=1e-13, abs=1e-13)
    assert digamma(x) == pytest.approx(mp_digamma(x), rel=1e-13, abs=1e-13)
    assert trigamma(x) == pytest.approx(mp_trigamma(x), rel=1e-13)


@settings(max_examples=200, deadline=None)
@given(st.floats(min_value=1e-3, max_value=1e4))
def test_recurrences(x):
    assert digamma(x + 1) == pytest.approx(digamma(x) + 1 / x, rel=1e-12, abs=1e-12)
    # the right side cancels two terms of size 1/x^2
    assert trigamma(x + 1) == pytest.approx(trigamma(x) - 1 / x**2, rel=1e-12, abs=1e-14 / x**2)


def test_vectorized_matches_scalar():
    x = np.geomspace(1e-6, 1e6, 101)
    for fn in (log_gamma, digamma, trigamma):
        vec = fn(x)
        assert vec.shape == x.shape
        np.testing.assert_array_equal(vec, [fn(float(v)) for v in x])


@pytest.mark.parametrize("fn", [log_gamma, digamma, trigamma])
@pytest.mark.parametrize("bad", [0.0, -1.0, float("nan"), float("inf")])
def test_domain_errors(fn, bad):
    with pytest.raises(DomainError):
        fn(bad)
