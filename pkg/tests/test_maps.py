import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from bclab.errors import ConfigurationError, NumericError
from bclab.maps import (MapSystem, Orbit, chmv_asymptotics_report, chmv_backward_sequence,
                        chmv_branch_residual, eval_chmv, eval_doubling, eval_lsv, iid_control_step,
                        initial_point, iterate, orbit_chunks, sample_orbit)
from bclab.rng import generator


# --- evaluation -----------------------------------------------------------


def test_eval_lsv_examples():
    assert eval_lsv(0.5, 0.5) == 0.0
    assert eval_lsv(0.3, 0.0) == 0.0
    assert eval_lsv(0.5, 0.25) == pytest.approx(0.25 * (1 + math.sqrt(2) * 0.5), abs=1e-15)
    assert eval_lsv(0.5, 0.25) == pytest.approx(0.4267766, abs=1e-7)


def test_eval_lsv_rejects_bad_alpha():
    for a in (0.0, 1.0, -0.5, 1.5):
        with pytest.raises(ConfigurationError):
            eval_lsv(a, 0.2)
    with pytest.raises(ConfigurationError):
        MapSystem.lsv(1.0)


def test_lsv_right_branch_is_doubling():
    for x in np.linspace(0.5, 0.999, 50):
        assert eval_lsv(0.6, x) == 2 * x - 1
        assert eval_lsv(0.6, x) == pytest.approx(eval_doubling(x), abs=1e-15)


def test_eval_chmv_examples():
    assert eval_chmv(3, 1 / 6) == pytest.approx(0.0, abs=1e-15)
    assert eval_chmv(3, 1.0) == pytest.approx(1.0, abs=1e-13)
    assert eval_chmv(3, 1 / 12) == pytest.approx(0.5 ** (1 / 3) - 1, abs=1e-15)
    assert eval_chmv(3, 1 / 12) == pytest.approx(-0.2063, abs=1e-4)


def test_eval_chmv_right_branch_matches_brentq():
    c = 1 / 6
    for x in np.linspace(c, 1.0, 37):
        ref = brentq(lambda t: t + c * (1 - t) ** 3 - x, 0.0, 1.0, xtol=1e-15)
        assert eval_chmv(3, x) == pytest.approx(ref, abs=1e-12)


def test_eval_chmv_rejects_bad_gamma():
    with pytest.raises(ConfigurationError):
        eval_chmv(1.0, 0.3)


def test_chmv_iteration_cap_raises_with_residual():
    with pytest.raises(NumericError) as exc:
        eval_chmv(3, 0.7, tol=1e-300, max_iter=2)
    assert exc.value.residual is not None


def test_eval_doubling_examples():
    assert eval_doubling(0.0) == 0.0
    assert eval_doubling(0.75) == 0.5
    assert eval_doubling(1 / 3) == 2 / 3


def test_chmv_residual_over_random_points():
    rng = np.random.default_rng(7)
    xs = rng.uniform(-1, 1, 100_000)
    sys = MapSystem.chmv(3)
    ts = sys.evaluate(xs)
    res = np.array([chmv_branch_residual(3, x, t) for x, t in zip(xs[:5000], ts[:5000])])
    assert res.max() <= sys.tol
    assert np.all((ts >= -1) & (ts <= 1))


def test_chmv_odd_symmetry_exact():
    rng = np.random.default_rng(8)
    xs = rng.uniform(0, 1, 2000)
    sys = MapSystem.chmv(3)
    assert np.array_equal(sys.evaluate(-xs), -sys.evaluate(xs))


@settings(max_examples=200, deadline=None)
@given(st.floats(1.05, 6.0), st.floats(-1.0, 1.0))
def test_chmv_symmetry_and_residual_property(gamma, x):
    t = eval_chmv(gamma, x)
    if x == 0.0:
        # T(0) = -1, which is the point 1 of the circle
        assert abs(t) == 1.0
    else:
        assert eval_chmv(gamma, -x) == -t
    assert chmv_branch_residual(gamma, x, t) <= 1e-13


def test_branches_tile_the_domain():
    for sys in (MapSystem.doubling(), MapSystem.lsv(0.4), MapSystem.chmv(2.5)):
        lo, hi = sys.domain
        doms = sorted(b.domain for b in sys.branches())
        assert doms[0][0] == lo and doms[-1][1] == hi
        assert all(a[1] == b[0] for a, b in zip(doms, doms[1:]))
        for br in sys.branches():
            ys = np.linspace(br.image[0], br.image[1], 21)[1:-1]
            xs = np.array([br.inverse(y) for y in ys])
            assert np.all(np.diff(xs) > 0)  # strictly monotone
            assert np.all((xs >= br.domain[0]) & (xs <= br.domain[1]))
            if sys.kind != "doubling":
                assert np.allclose([sys(x) for x in xs], ys, atol=1e-12)


def test_chmv_preserves_lebesgue():
    sys = MapSystem.chmv(3)
    rng = np.random.default_rng(11)
    for _ in range(100):
        lo, hi = np.sort(rng.uniform(-1, 1, 2))
        assert abs(sys.preimage_length(lo, hi) - (hi - lo)) < 10 * sys.tol


@settings(max_examples=100, deadline=None)
@given(st.floats(1.2, 5.0), st.floats(-1.0, 1.0), st.floats(-1.0, 1.0))
def test_chmv_preimage_length_property(gamma, a, b):
    lo, hi = min(a, b), max(a, b)
    sys = MapSystem.chmv(gamma)
    assert abs(sys.preimage_length(lo, hi) - (hi - lo)) < 1e-12


def test_doubling_and_lsv_preimages():
    assert MapSystem.doubling().preimage_length(0.2, 0.7) == pytest.approx(0.5, abs=1e-15)
    # lsv does not preserve Lebesgue: the left preimage of [0, y] is shorter than y/2 + ...
    lsv = MapSystem.lsv(0.5)
    assert lsv.preimage_length(0.0, 0.5) != pytest.approx(0.5, abs=1e-3)


# --- orbits ---------------------------------------------------------------


def test_iterate_examples():
    assert iterate(MapSystem.doubling(), Orbit(x0=0.1, length=3)) == pytest.approx(0.8, abs=1e-15)
    for sys, x0 in ((MapSystem.doubling(), 0.3), (MapSystem.lsv(0.5), 0.2), (MapSystem.chmv(3), -0.4)):
        assert iterate(sys, Orbit(x0=x0, length=0)) == x0
    assert iterate(MapSystem.lsv(0.5), Orbit(x0=0.25, length=1)) == pytest.approx(0.4267766, abs=1e-7)


def test_iterate_visitor_sees_every_step():
    seen = []
    iterate(MapSystem.doubling(), Orbit(x0=0.1, length=3), lambda k, x: seen.append((k, x)))
    assert [k for k, _ in seen] == [0, 1, 2, 3]
    assert seen[2][1] == pytest.approx(0.4)


def test_iterate_needs_initial_point():
    with pytest.raises(ConfigurationError):
        iterate(MapSystem.doubling(), Orbit(length=3))


def test_orbit_chunks_match_scalar_iteration():
    for sys, x0 in ((MapSystem.lsv(0.6), 0.3), (MapSystem.chmv(3), 0.41)):
        ref = []
        iterate(sys, Orbit(x0=x0, length=500), lambda k, x: ref.append(x))
        got = sample_orbit(sys, Orbit(x0=x0, length=500))
        assert np.allclose(got, ref, atol=1e-12, rtol=0) or np.array_equal(got[:30], ref[:30])


@pytest.mark.parametrize("kind", ["doubling", "lsv", "chmv"])
def test_chunking_is_invisible(kind):
    sys = {"doubling": MapSystem.doubling(), "lsv": MapSystem.lsv(0.6), "chmv": MapSystem.chmv(3)}[kind]
    orb = Orbit(length=5000, seed=3, index=2, burn_in=77)
    full = sample_orbit(sys, orb)
    for chunk in (64, 640, 4096):
        parts = np.concatenate([b for _, b in orbit_chunks(sys, orb, chunk)])
        assert np.array_equal(parts, full)


def test_orbits_are_deterministic_and_index_keyed():
    sys = MapSystem.lsv(0.6)
    a = sample_orbit(sys, Orbit(length=1000, seed=5, index=1))
    b = sample_orbit(sys, Orbit(length=1000, seed=5, index=1))
    c = sample_orbit(sys, Orbit(length=1000, seed=5, index=2))
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_doubling_bit_stream_is_the_doubling_map():
    x = sample_orbit(MapSystem.doubling(), Orbit(length=20_000, seed=1))
    assert np.max(np.abs((2 * x[:-1]) % 1.0 - x[1:])) < 2.0**-52
    assert abs(x.mean() - 0.5) < 0.01


def test_doubling_explicit_start_point():
    x = sample_orbit(MapSystem.doubling(), Orbit(x0=0.1, length=3))
    assert x[0] == 0.1
    assert x[3] == pytest.approx(0.8, abs=1e-15)


def test_initial_point_in_domain():
    for sys in (MapSystem.doubling(), MapSystem.lsv(0.5), MapSystem.chmv(2)):
        lo, hi = sys.domain
        for k in range(20):
            x = initial_point(sys, Orbit(length=1, seed=9, index=k))
            assert lo <= x <= hi


def test_chmv_orbits_stay_uniform():
    # Lebesgue-started orbits of a Lebesgue-preserving map are uniform at every step
    sys = MapSystem.chmv(3)
    x = np.random.default_rng(2).uniform(-1, 1, 20_000)
    for _ in range(50):
        x = sys.evaluate(x)
    h, _ = np.histogram(x, bins=10, range=(-1, 1))
    assert np.all(np.abs(h / x.shape[0] - 0.1) < 0.01)  # about 4.7 binomial sd


def test_iid_control_step():
    rng = generator(0)
    assert all(iid_control_step(0.0, rng) == 0 for _ in range(100))
    assert all(iid_control_step(1.0, rng) == 1 for _ in range(100))
    hits = (generator(1).random(10**6) < 0.5).mean()
    assert abs(hits - 0.5) < 0.002
    with pytest.raises(ValueError):
        iid_control_step(1.5, rng)


# --- backward sequences --------------------------------------------------


def test_backward_sequence_examples():
    seq = chmv_backward_sequence(3, 10)
    assert seq.a[0] == -1 / 6
    a1 = -1 / 6 - (1 / 6) * (5 / 6) ** 3
    assert seq.a[1] == pytest.approx(a1, abs=1e-15)
    assert seq.a[1] == pytest.approx(-0.263117, abs=1e-6)
    assert seq.b_at(1) == pytest.approx((1 / 6) * (5 / 6) ** 3, abs=1e-15)
    assert seq.b_at(1) == pytest.approx(0.0964506, abs=1e-7)
    assert seq.a[1] + seq.b_at(1) == seq.a[0]
    assert seq.tau == 0.5


def test_backward_sequence_identities():
    seq = chmv_backward_sequence(3, 5000)
    assert np.all(seq.a[1:] + seq.b == seq.a[:-1])
    assert np.all(np.diff(seq.a) < 0) and np.all(seq.a > -1)
    assert np.all(np.diff(seq.b) < 0) and np.all(seq.b > 0) and np.all(seq.b < 1 / 6)
    for i in (1, 2, 10, 100, 5000):
        assert eval_chmv(3, seq.b_at(i)) == pytest.approx(seq.a[i - 1], abs=1e-12)


def test_backward_recursion_matches_root_solved_preimages():
    seq = chmv_backward_sequence(3, 200)
    a = -1 / 6
    for i in range(1, 201):
        prev = a
        a = brentq(lambda x: eval_chmv(3, x) - prev, -1.0, -1 / 6, xtol=1e-16)
        assert seq.a[i] == pytest.approx(a, abs=1e-12)


def test_asymptotics_constants():
    seq = chmv_backward_sequence(3, 40_000)
    tab = chmv_asymptotics_report(seq, [10, 100, 1000, 10_000, 40_000])
    assert tab.leading_constant == pytest.approx(math.sqrt(3), abs=1e-12)
    assert np.all(np.diff(np.abs(tab.ratio_a - 1)) < 0)
    assert abs(tab.ratio_a[-1] - 1) < 1e-3
    assert abs(tab.ratio_b[-1] - 1) < 1e-2
    # n^-1/2 law: quadrupling n halves the arc length
    L = seq.lengths()
    assert L[40_000] / L[10_000] == pytest.approx(0.5, abs=1e-3)


def test_asymptotics_needs_length():
    with pytest.raises(ConfigurationError):
        chmv_asymptotics_report(chmv_backward_sequence(3, 5))


def test_arc_lengths_diverge_b_lengths_converge():
    seq = chmv_backward_sequence(3, 10**6)
    L = seq.lengths()
    s4, s6 = L[1 : 10**4 + 1].sum(), L[1:].sum()
    assert s6 / s4 > 9  # ~ sqrt(n) growth
    tails = [seq.b[n:].sum() for n in (10**3, 10**4, 10**5)]
    assert tails[0] > tails[1] > tails[2]
    # the tail follows the summed asymptotic law c N^(1 - g tau) / (g tau - 1)
    pred = (1 / 6) * 3**1.5 * (10**4) ** -0.5 / 0.5
    assert tails[1] == pytest.approx(pred, rel=0.15)
