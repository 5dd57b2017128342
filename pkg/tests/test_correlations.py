import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bclab.correlations import (CorrelationCurve, Observable, correlation_curve, estimate_correlation,
                                fit_decay_rate, mollify_indicator, significant_lags, slack_for_index)
from bclab.errors import ConfigurationError
from bclab.maps import MapSystem, Orbit, sample_orbit
from bclab.rng import Purpose


def cosine():
    return Observable.from_function(lambda x: np.cos(2 * np.pi * x))


def test_mollifier_examples():
    f = mollify_indicator(0.2, 0.4, 0.1)
    assert f(0.3) == 1.0
    assert f(0.45) == pytest.approx(0.5)
    assert f(0.55) == 0.0
    assert f.lipschitz == pytest.approx(10.0)
    assert not f.degenerate


def test_mollifier_degenerate_and_errors():
    f = mollify_indicator(0.2, 0.4, 0.9)
    assert f.degenerate and f.is_constant and f(0.95) == 1.0
    with pytest.raises(ConfigurationError):
        mollify_indicator(0.2, 0.4, 0.0)


def test_slack_gives_quoted_norm():
    # a set starting at 0 keeps the left ramp exact in floating point
    for k, delta in ((10, 1.0), (1000, 0.5), (10**5, 0.8)):
        s = slack_for_index(k, delta)
        f = mollify_indicator(0.0, 0.25, s)
        assert f.lipschitz == pytest.approx((k * math.log(k) ** 2) ** (1 / delta), rel=1e-6)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.05, 0.6), st.floats(0.0, 0.3), st.floats(1e-4, 0.05))
def test_mollifier_sandwich(lo, width, slack):
    hi = lo + width
    f = mollify_indicator(lo, hi, slack)
    x = np.linspace(0, 1, 2001)
    inside = (x >= lo) & (x <= hi)
    collar = (x > lo - slack) & (x < hi + slack)
    v = f(x)
    assert np.all(v[inside] == 1.0)
    assert np.all(v >= inside) and np.all(v <= collar)
    assert np.all((0 <= v) & (v <= 1))


def test_mollifier_mean_consistency():
    # Lebesgue mean of the doubling map; the collar has measure 2 * slack
    for lo, hi, s in ((0.2, 0.4, 0.1), (0.5, 0.5, 0.01), (0.1, 0.7, 0.05)):
        excess = mollify_indicator(lo, hi, s).lebesgue_mean((0.0, 1.0)) - (hi - lo)
        assert 0 <= excess <= 2 * s
        assert excess == pytest.approx(s)


def test_observable_lipschitz_and_algebra():
    f = Observable(np.array([0.0, 0.5, 1.0]), np.array([0.0, 2.0, 1.5]))
    assert f.lipschitz == 4.0
    g = mollify_indicator(0.2, 0.4, 0.1)
    h = 2 * f + g * 3.0
    x = np.linspace(0, 1, 101)
    assert np.allclose(h(x), 2 * f(x) + 3 * g(x), atol=1e-14)
    with pytest.raises(ConfigurationError):
        Observable(np.array([0.0, 0.0]), np.array([1.0, 2.0]))


def test_doubling_cosine_pair():
    curve = correlation_curve(MapSystem.doubling(), cosine(), cosine(), range(11), 10**6)
    assert curve.estimates[0] == pytest.approx(0.5, abs=0.005)
    z = np.abs(curve.estimates[1:]) / curve.stderr[1:]
    assert np.all(z <= 3)
    assert np.all(curve.stderr > 0)


def test_constant_observable_gives_zero():
    for sys in (MapSystem.doubling(), MapSystem.lsv(0.6)):
        c = correlation_curve(sys, Observable.constant(0.7), cosine(), [0, 1, 5], 10**4, replicates=3)
        assert np.all(c.estimates == 0.0)


def test_lag_zero_is_sample_covariance():
    sys = MapSystem.doubling()
    phi, psi = cosine(), mollify_indicator(0.1, 0.3, 0.05)
    n = 5000
    est, _ = estimate_correlation(sys, phi, psi, 0, n, replicates=1, seed=7)
    x = sample_orbit(sys, Orbit(length=n - 1, seed=7, index=0, purpose=Purpose.CORRELATION))
    assert est == pytest.approx(np.cov(phi(x), psi(x), bias=True)[0, 1], abs=1e-14)


def test_bilinearity_on_shared_orbit():
    sys = MapSystem.lsv(0.5)
    p1, p2 = cosine(), mollify_indicator(0.0, 0.1, 0.05)
    psi = Observable.from_function(lambda x: x * x, pieces=64)
    lags = [0, 1, 3]
    kw = dict(lags=lags, n=20_000, replicates=2, seed=5)
    c1 = correlation_curve(sys, p1, psi, **kw).estimates
    c2 = correlation_curve(sys, p2, psi, **kw).estimates
    c12 = correlation_curve(sys, 2.0 * p1 + p2 * -0.5, psi, **kw).estimates
    assert np.allclose(c12, 2 * c1 - 0.5 * c2, atol=1e-12)


def test_single_replicate_flagged():
    c = correlation_curve(MapSystem.doubling(), cosine(), cosine(), [0, 1], 1000, replicates=1)
    assert c.flagged and np.all(np.isnan(c.stderr))
    assert c.to_csv().splitlines()[0] == "lag,estimate,stderr"


def test_synthetic_fits_recover_rates():
    m = np.arange(1, 21)
    poly = fit_decay_rate(CorrelationCurve.synthetic(m, m ** -2.0), "poly")
    assert poly.available and poly.rate == pytest.approx(2.0, abs=0.01)
    assert poly.residual == pytest.approx(0.0, abs=1e-9)
    m = np.arange(0, 20)
    ex = fit_decay_rate(CorrelationCurve.synthetic(m, 0.5 ** m), "exp")
    assert ex.available and ex.rate == pytest.approx(0.5, abs=0.01)


def test_fit_unavailable_with_noise():
    m = np.arange(1, 11)
    c = CorrelationCurve.synthetic(m, np.full(10, 1e-3), stderr=np.full(10, 1e-2))
    assert not significant_lags(c).any()
    f = fit_decay_rate(c)
    assert not f.available and math.isnan(f.rate)
    with pytest.raises(ConfigurationError):
        fit_decay_rate(c, "stretched")
