import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from bclab.errors import ConfigurationError
from bclab.maps import MapSystem
from bclab.returns import (ReturnSample, ecdf, first_return_times, ks_distance, ks_exponential,
                           ks_trend_non_increasing, return_law_sweep, short_return_mass, window_length)
from bclab.targets import Ball, Interval

GENERIC = (math.sqrt(5) - 1) / 2
DOUBLING = MapSystem.doubling()


def test_kac_doubling_eighth():
    s = first_return_times(DOUBLING, Interval(0.0, 0.125), 20_000, 10**6, seed=2)
    assert s.size == 20_000 and not s.partial
    assert s.kac_mean(nominal=True) == pytest.approx(1.0, abs=0.05)
    assert abs(s.kac_mean() - 1) <= 3 * s.kac_stderr()
    assert np.all(s.tau >= 1)


@pytest.mark.parametrize("system,region", [
    (MapSystem.lsv(0.6), Interval(0.3, 0.5)),
    (MapSystem.chmv(3.0), Interval(-0.2, 0.2)),
    (DOUBLING, Ball(GENERIC, 0.01)),
])
def test_kac_other_maps(system, region):
    s = first_return_times(system, region, 5000, 10**7, seed=1)
    assert abs(s.kac_mean() - 1) <= 3 * s.kac_stderr()


def test_full_space_returns_immediately():
    s = first_return_times(DOUBLING, Interval(0.0, 1.0), 1000, 10**4)
    assert np.all(s.tau == 1)
    rep = ks_exponential(s)
    assert rep.degenerate


def test_dyadic_interval_has_unit_returns():
    # T^-1 [0, 2^-k) meets [0, 2^-k) in [0, 2^-k-1)
    s = first_return_times(DOUBLING, Interval(0.0, 2.0**-6), 5000, 10**7, seed=3)
    assert s.tau.min() == 1
    assert np.mean(s.tau == 1) == pytest.approx(0.5, abs=0.03)


def test_partial_sample_flag():
    s = first_return_times(DOUBLING, Interval(0.0, 1e-6), 1000, 10**4)
    assert s.partial and s.size < 1000


def test_sample_csv():
    s = ReturnSample(Interval(0, 0.5), np.array([1, 3]), 0.5, 0.5, 4, 2, False)
    assert s.to_csv() == "tau,t\n1,0.5\n3,1.5\n"


def test_ks_matches_scipy_on_exponential_draws():
    rng = np.random.default_rng(11)
    fails = 0
    for _ in range(20):
        x = rng.exponential(size=10**4)
        d = ks_distance(x)
        assert d == pytest.approx(stats.kstest(x, "expon").statistic, abs=1e-12)
        fails += d >= 0.02
    assert fails <= 1


def test_ks_with_ties_matches_scipy():
    x = np.repeat([0.5, 1.0, 2.0], [3, 5, 2]).astype(float)
    assert ks_distance(x) == pytest.approx(stats.kstest(x, "expon").statistic, abs=1e-12)


def test_ks_degenerate_sample():
    for t0 in (0.1, 1.0, 6.0):
        F = 1 - math.exp(-t0)
        assert ks_distance(np.full(50, t0)) == pytest.approx(max(F, 1 - F), abs=1e-15)
    assert ks_distance(np.full(10, 20.0)) > 0.999


def test_low_power_flag():
    assert ks_exponential(np.ones(999)).low_power
    assert not ks_exponential(np.random.default_rng(0).exponential(size=1000)).low_power


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 50), min_size=1, max_size=200))
def test_ecdf_properties(values):
    u, F = ecdf(values)
    assert np.all(np.diff(u) > 0) and np.all(np.diff(F) > 0)
    assert F[-1] == 1.0 and F[0] > 0
    assert 0.0 <= ks_distance(values) <= 1.0


def test_trend_test():
    assert ks_trend_non_increasing([0.1, 0.05, 0.06], [10**4] * 3)
    assert not ks_trend_non_increasing([0.02, 0.2], [10**4] * 2)


def test_sweep_generic_and_periodic_center():
    radii = 2.0 ** -np.arange(4, 9)
    gen = return_law_sweep(DOUBLING, GENERIC, radii, samples=3000)
    assert gen.non_increasing
    assert gen.ks[-1] < 0.1
    per = return_law_sweep(DOUBLING, 0.0, radii, samples=3000)
    # half of a ball about the fixed point comes back at once, at t = mu(B) < t*
    assert all(r.small_mass > 0.2 for r, s in zip(per.reports, per.samples) if s.mu_hat < 0.1)
    assert per.reports[-1].small_mass > 0.4


def test_sweep_errors_and_full_space():
    with pytest.raises(ConfigurationError):
        return_law_sweep(DOUBLING, GENERIC, [0.01, 0.02])
    full = return_law_sweep(DOUBLING, GENERIC, [0.6], samples=100)
    assert full.reports[0].degenerate


def test_window_length():
    assert window_length(1000, 5) == math.ceil(math.log(1000) ** 5)
    assert window_length(2, 1) == 1


def test_short_returns_dyadic_closed_form():
    # mu([0, 2^-k) n T^-r [0, 2^-k)) = 2^-(k + r) for r < k
    k = 6
    res = short_return_mass(DOUBLING, Interval(0.0, 2.0**-k), 100, max_lag=3, length=10**6, seed=4)
    exact = 2.0 ** -(k + np.arange(1, 4))
    assert np.all(np.abs(res.mass - exact) <= 3 * res.stderr)
    assert res.mu_hat == pytest.approx(2.0**-k, rel=0.05)


def test_short_returns_empty_set():
    res = short_return_mass(DOUBLING, Interval(0.3, 0.3), 100, max_lag=10, length=10**5)
    assert np.all(res.mass == 0) and not res.resolved
    assert np.all(res.upper > 0)


def test_short_returns_lsv_fixed_point_not_rare():
    # mu([0, 1e-5)) is about 1e-3 for alpha = 0.6
    res = short_return_mass(MapSystem.lsv(0.6), Interval(0.0, 1e-5), 1000, max_lag=20, length=10**7, seed=2)
    assert res.mass[0] >= 0.5 * res.mu_hat
    assert res.not_rare


def test_short_returns_generic_doubling_rare():
    i = 1000
    res = short_return_mass(DOUBLING, Ball(GENERIC, 0.5 / i), i, k=2, length=10**7, seed=1)
    assert res.max_lag == window_length(i, 2)
    assert res.eta > 0 and not res.not_rare
