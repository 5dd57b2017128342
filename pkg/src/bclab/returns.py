"""First-return times into a fixed set, exponential-law diagnostics and short-return masses."""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numba import njit

from .errors import ConfigurationError
from .maps import DEFAULT_CHUNK, MapSystem, Orbit, orbit_chunks
from .rng import Purpose
from .targets import Ball

DEFAULT_T_STAR = 0.1
DEFAULT_WINDOW_EXPONENT = 5
LOW_POWER = 1000


@dataclass
class ReturnSample:
    region: object
    tau: np.ndarray  # raw return times, all >= 1
    mu_hat: float  # Birkhoff estimate of mu(B) over the steps walked
    mu_nominal: float
    steps: int
    requested: int
    partial: bool

    @property
    def size(self):
        return int(self.tau.shape[0])

    @property
    def normalized(self):
        return self.tau * self.mu_hat

    def kac_mean(self, nominal=False):
        """mean(tau) mu(B); Kac's lemma says 1."""
        mu = self.mu_nominal if nominal else self.mu_hat
        return float(self.tau.mean() * mu) if self.size else math.nan

    def kac_stderr(self, nominal=False):
        mu = self.mu_nominal if nominal else self.mu_hat
        if self.size < 2:
            return math.inf
        return float(self.tau.std(ddof=1) / math.sqrt(self.size) * mu)

    def to_csv(self):
        buf = io.StringIO()
        buf.write("tau,t\n")
        for a, b in zip(self.tau, self.normalized):
            buf.write(f"{int(a)},{float(b)!r}\n")
        return buf.getvalue()


def first_return_times(system: MapSystem, region, samples, budget, seed=0, index=0,
                       burn_in=None, chunk=DEFAULT_CHUNK) -> ReturnSample:
    """Successive return times of one orbit to ``region``.

    Gaps between consecutive visits are return times of points distributed
    (in the ergodic limit) by the conditional measure on the region.  Stops
    after ``samples`` returns or ``budget`` iterations, whichever comes first.
    """
    if not system.is_orbit_map:
        raise ConfigurationError("return times need an orbit map")
    if samples < 1 or budget < 1:
        raise ConfigurationError("samples and budget must be positive")
    if burn_in is None:
        burn_in = 10_000 if system.reference_measure == "acip" else 0
    orbit = Orbit(length=int(budget), seed=seed, index=index, burn_in=burn_in, purpose=Purpose.RETURNS)
    taus = []
    have = 0
    visits = 0
    prev = -1
    steps = 0
    for start, block in orbit_chunks(system, orbit, chunk):
        hits = np.flatnonzero(region.contains(block)) + start
        if prev < 0 and hits.shape[0]:
            first, hits = hits[0], hits[1:]
            prev = int(first)
            visits += 1
        if hits.shape[0]:
            gaps = np.diff(np.concatenate([[prev], hits]))
            need = samples - have
            if gaps.shape[0] >= need:
                taus.append(gaps[:need])
                have += need
                visits += need
                steps = int(hits[need - 1]) + 1
                break
            taus.append(gaps)
            have += gaps.shape[0]
            visits += gaps.shape[0]
            prev = int(hits[-1])
        steps = start + block.shape[0]
    tau = np.concatenate(taus).astype(np.int64) if taus else np.empty(0, dtype=np.int64)
    mu_hat = visits / steps if steps else math.nan
    return ReturnSample(region, tau, mu_hat, region.measure(system), steps, int(samples),
                        tau.shape[0] < samples)


def ecdf(values):
    """Sorted distinct values and the right-continuous empirical CDF at each."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    u, counts = np.unique(v, return_counts=True)
    return u, np.cumsum(counts) / v.shape[0]


def exponential_cdf(t):
    return -np.expm1(-np.asarray(t, dtype=np.float64))


@dataclass
class DistributionReport:
    size: int
    ks: float
    mean: float
    t_star: float
    small_mass: float  # empirical CDF at t_star
    low_power: bool
    mu_hat: float = math.nan
    kac_nominal: float = math.nan
    degenerate: bool = False
    support: np.ndarray = field(default=None, repr=False)
    cdf: np.ndarray = field(default=None, repr=False)

    def to_dict(self):
        return {k: getattr(self, k) for k in
                ("size", "ks", "mean", "t_star", "small_mass", "low_power", "mu_hat",
                 "kac_nominal", "degenerate")}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    def cdf_csv(self):
        buf = io.StringIO()
        buf.write("t,F_hat,F_exp\n")
        for t, f in zip(self.support, self.cdf):
            buf.write(f"{float(t)!r},{float(f)!r},{float(exponential_cdf(t))!r}\n")
        return buf.getvalue()


def ks_distance(values):
    """sup_t |F_hat(t) - (1 - e^-t)|, exact for samples with ties."""
    u, F = ecdf(values)
    if u.shape[0] == 0:
        return math.nan
    G = exponential_cdf(u)
    left = np.concatenate([[0.0], F[:-1]])
    return float(min(1.0, max(np.max(np.abs(F - G)), np.max(np.abs(left - G)))))


def ks_exponential(sample, t_star=DEFAULT_T_STAR) -> DistributionReport:
    """Compare normalised return times (or raw values) with the unit exponential law."""
    if isinstance(sample, ReturnSample):
        t = sample.normalized
        mu_hat, kac = sample.mu_hat, sample.kac_mean(nominal=True)
        degenerate = bool(sample.size and np.all(sample.tau == 1))
    else:
        t = np.asarray(sample, dtype=np.float64)
        mu_hat = kac = math.nan
        degenerate = False
    u, F = ecdf(t)
    n = int(t.shape[0])
    small = float(np.searchsorted(np.sort(t), t_star, side="right") / n) if n else math.nan
    return DistributionReport(n, ks_distance(t), float(t.mean()) if n else math.nan, t_star, small,
                              n < LOW_POWER, mu_hat, kac, degenerate or (n > 0 and u.shape[0] == 1), u, F)


@dataclass
class SweepResult:
    radii: np.ndarray
    reports: list
    samples: list
    ks: np.ndarray
    non_increasing: bool


def ks_trend_non_increasing(ks, sizes, c=1.36):
    """Each K-S distance is at most the previous one plus the 95% two-sample band."""
    for j in range(1, len(ks)):
        band = c * math.sqrt(1.0 / sizes[j - 1] + 1.0 / sizes[j])
        if ks[j] > ks[j - 1] + band:
            return False
    return True


def return_law_sweep(system: MapSystem, center, radii, samples=10_000, seed=0, budget_factor=20.0,
                     burn_in=None, t_star=DEFAULT_T_STAR) -> SweepResult:
    """Return-time law at shrinking balls about ``center``; radii must decrease."""
    radii = np.asarray(radii, dtype=np.float64)
    if np.any(np.diff(radii) >= 0):
        raise ConfigurationError("radii must be strictly decreasing")
    reports, sams = [], []
    for j, r in enumerate(radii):
        ball = Ball(center, float(r), system.period)
        mu = max(ball.measure(system), 1e-300)
        budget = int(min(budget_factor * samples / mu, 2**62))
        s = first_return_times(system, ball, samples, budget, seed=seed, index=j, burn_in=burn_in)
        sams.append(s)
        reports.append(ks_exponential(s, t_star))
    ks = np.array([r.ks for r in reports])
    trend = ks_trend_non_increasing(ks, [max(r.size, 1) for r in reports])
    return SweepResult(radii, reports, sams, ks, trend)


# --- short returns -------------------------------------------------------


@njit(cache=True, nogil=True)
def _pair_lag_counts(visits, max_lag, batch_len, n_batches, counts):
    """counts[b, r] += #{visit j in batch b : j + r also a visit}, 1 <= r <= max_lag."""
    nv = visits.shape[0]
    for a in range(nv):
        b = visits[a] // batch_len
        if b >= n_batches:
            break
        for c in range(a + 1, nv):
            r = visits[c] - visits[a]
            if r > max_lag:
                break
            counts[b, r] += 1


@dataclass
class ShortReturnResult:
    index: int
    lags: np.ndarray
    mass: np.ndarray
    stderr: np.ndarray
    upper: np.ndarray  # one-sided 95% upper bounds
    mu_hat: float
    max_mass: float
    max_lag: int
    eta: float
    eta_stderr: float
    resolved: bool

    @property
    def not_rare(self):
        """Short returns are not significantly rarer than 1/i: eta is not significantly positive."""
        return self.resolved and self.eta <= 3.0 * self.eta_stderr

    def to_dict(self):
        return {"index": self.index, "max_lag": self.max_lag, "mu_hat": self.mu_hat,
                "max_mass": self.max_mass, "eta": self.eta, "eta_stderr": self.eta_stderr,
                "resolved": self.resolved, "not_rare": bool(self.not_rare)}


def window_length(i, k=DEFAULT_WINDOW_EXPONENT):
    """ceil((log i)^k)."""
    return max(1, math.ceil(math.log(i) ** k))


def short_return_mass(system: MapSystem, region, i, k=DEFAULT_WINDOW_EXPONENT, length=10**7, seed=0,
                      burn_in=None, max_lag=None, batches=20, chunk=DEFAULT_CHUNK) -> ShortReturnResult:
    """Birkhoff estimates of mu(B n T^-r B) for r = 1 .. ceil((log i)^k).

    Error bars are batch means over ``batches`` consecutive stretches of the
    orbit.  A lag with no joint visit gets the rule-of-three upper bound
    3 / (pairs examined).  The implied exponent is
    eta = -log(max_r mass * i) / log i.
    """
    if i < 2:
        raise ConfigurationError("index must be >= 2")
    R = window_length(i, k) if max_lag is None else int(max_lag)
    if length <= R * batches:
        raise ConfigurationError("orbit too short for the lag window")
    if burn_in is None:
        burn_in = 10_000 if system.reference_measure == "acip" else 0
    batch_len = length // batches
    usable = batch_len * batches
    orbit = Orbit(length=usable + R - 1, seed=seed, burn_in=burn_in, purpose=Purpose.SHORT_RETURNS)
    parts = [np.flatnonzero(region.contains(block)) + start for start, block in orbit_chunks(system, orbit, chunk)]
    visits = np.concatenate(parts).astype(np.int64) if parts else np.empty(0, dtype=np.int64)
    counts = np.zeros((batches, R + 1), dtype=np.int64)
    _pair_lag_counts(visits, R, batch_len, batches, counts)
    per_batch = counts[:, 1:] / batch_len
    mass = per_batch.mean(axis=0)
    se = per_batch.std(axis=0, ddof=1) / math.sqrt(batches)
    upper = np.where(mass > 0, mass + 1.645 * se, 3.0 / usable)
    mu_hat = float(np.count_nonzero(visits < usable) / usable)
    j = int(np.argmax(mass))
    top = float(mass[j])
    logi = math.log(i)
    if top > 0:
        eta = -math.log(top * i) / logi
        eta_se = float(se[j] / top / logi)
        resolved = True
    else:
        # only a bound: eta >= -log(upper * i) / log i
        eta = -math.log(float(upper.max()) * i) / logi
        eta_se = math.nan
        resolved = False
    return ShortReturnResult(int(i), np.arange(1, R + 1), mass, se, upper, mu_hat, top, R, eta, eta_se, resolved)
