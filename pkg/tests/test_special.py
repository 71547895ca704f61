import mpmath as mp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from evisteer.errors import DomainError
from evisteer.special import digamma, lgamma, trigamma

mp.mp.dps = 30
GRID = np.logspace(-3, 3, 241)
ORACLES = {
    digamma: lambda x: mp.digamma(x),
    trigamma: lambda x: mp.polygamma(1, x),
    lgamma: lambda x: mp.loggamma(x),
}


@pytest.mark.parametrize("fn", list(ORACLES), ids=lambda f: f.__name__)
def test_matches_mpmath_on_log_grid(fn):
    got = fn(GRID)
    want = np.array([float(ORACLES[fn](mp.mpf(float(x)))) for x in GRID])
    # relative error, with an absolute guard where the function crosses zero
    err = np.abs(got - want) / np.maximum(np.abs(want), 1.0)
    assert err.max() < 1e-10


@given(st.floats(1e-3, 1e3))
def test_digamma_recurrence(x):
    assert abs(digamma(x + 1.0) - digamma(x) - 1.0 / x) < 1e-9 * max(1.0, 1.0 / x)


@given(st.floats(1e-3, 1e3))
def test_lgamma_recurrence(x):
    assert abs(lgamma(x + 1.0) - lgamma(x) - np.log(x)) < 1e-9 * max(1.0, abs(lgamma(x)))


def test_known_values():
    assert digamma(1.0) == pytest.approx(-0.5772156649015329, abs=1e-15)
    assert lgamma(0.5) == pytest.approx(0.5 * np.log(np.pi), abs=1e-14)
    assert trigamma(1.0) == pytest.approx(np.pi**2 / 6, abs=1e-14)


def test_vectorized_shape():
    x = np.linspace(0.5, 5.0, 12).reshape(3, 4)
    assert digamma(x).shape == lgamma(x).shape == trigamma(x).shape == (3, 4)


@pytest.mark.parametrize("bad", [0.0, -1.0, -2.5])
def test_nonpositive_is_domain_error(bad):
    for fn in ORACLES:
        with pytest.raises(DomainError):
            fn(np.array([1.0, bad]))
