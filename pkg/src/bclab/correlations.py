"""Monte Carlo decay-of-correlations estimates for piecewise-linear observables."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigurationError
from .maps import MapSystem, Orbit, sample_orbit
from .rng import Purpose

DEFAULT_REPLICATES = 8


@dataclass(frozen=True, eq=False)
class Observable:
    """Piecewise-linear function through (breakpoints[k], values[k]).

    Outside the breakpoint range the end values are held constant.
    ``degenerate`` marks a mollified indicator that collapsed to the constant 1.
    """

    breakpoints: np.ndarray
    values: np.ndarray
    degenerate: bool = False

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=np.float64)
        v = np.asarray(self.values, dtype=np.float64)
        if bp.ndim != 1 or bp.shape != v.shape or bp.shape[0] < 1:
            raise ConfigurationError("breakpoints and values must be equal-length 1-d arrays")
        if np.any(np.diff(bp) <= 0):
            raise ConfigurationError("breakpoints must be strictly increasing")
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "values", v)

    def __call__(self, x):
        return np.interp(x, self.breakpoints, self.values)

    @property
    def lipschitz(self):
        if self.breakpoints.shape[0] < 2:
            return 0.0
        return float(np.max(np.abs(np.diff(self.values) / np.diff(self.breakpoints))))

    @property
    def is_constant(self):
        return bool(np.all(self.values == self.values[0]))

    def lebesgue_mean(self, domain):
        """Exact integral over ``domain`` divided by its length."""
        lo, hi = domain
        bp = np.unique(np.concatenate([[lo, hi], self.breakpoints[(self.breakpoints > lo) & (self.breakpoints < hi)]]))
        return float(np.trapezoid(self(bp), bp) / (hi - lo))

    @classmethod
    def constant(cls, c, domain=(0.0, 1.0)):
        return cls(np.array(domain, dtype=np.float64), np.array([c, c], dtype=np.float64))

    @classmethod
    def from_function(cls, f, domain=(0.0, 1.0), pieces=4096):
        """Interpolant of ``f`` on a uniform grid."""
        x = np.linspace(domain[0], domain[1], pieces + 1)
        return cls(x, np.asarray(f(x), dtype=np.float64))

    def _combine(self, other, op):
        bp = np.union1d(self.breakpoints, other.breakpoints)
        return Observable(bp, op(self(bp), other(bp)))

    def __add__(self, other):
        if isinstance(other, Observable):
            return self._combine(other, np.add)
        return Observable(self.breakpoints, self.values + other)

    def __mul__(self, a):
        return Observable(self.breakpoints, self.values * float(a))

    __rmul__ = __mul__


def mollify_indicator(lo, hi, slack, domain=(0.0, 1.0)):
    """Lipschitz approximation of 1_[lo, hi]: 1 on the set, 0 beyond ``slack``, linear between.

    When the slack exceeds the length of the complement the constant 1 is
    returned, flagged ``degenerate``.
    """
    if not slack > 0:
        raise ConfigurationError("slack must be positive")
    if hi < lo:
        raise ConfigurationError("empty set")
    dlo, dhi = domain
    if slack > (dhi - dlo) - (hi - lo):
        return Observable(np.array(domain, dtype=np.float64), np.ones(2), degenerate=True)
    bp = [lo - slack, lo, hi, hi + slack]
    vals = [0.0, 1.0, 1.0, 0.0]
    if hi == lo:
        bp, vals = [lo - slack, lo, hi + slack], [0.0, 1.0, 0.0]
    return Observable(np.array(bp), np.array(vals))


def slack_for_index(k, delta):
    """(k (log k)^2)^(-1/delta), the slack giving the mollifier norm growth used in the SBC argument."""
    return (k * math.log(k) ** 2) ** (-1.0 / delta)


@dataclass
class CorrelationCurve:
    lags: np.ndarray
    estimates: np.ndarray
    stderr: np.ndarray
    replicates: np.ndarray  # shape (replicates, lags)
    sample_length: int
    flagged: bool = False  # fewer than 2 replicates: no error bars

    def to_csv(self):
        buf = io.StringIO()
        buf.write("lag,estimate,stderr\n")
        for m, c, s in zip(self.lags, self.estimates, self.stderr):
            buf.write(f"{int(m)},{float(c)!r},{float(s)!r}\n")
        return buf.getvalue()

    @classmethod
    def synthetic(cls, lags, values, stderr=None):
        lags = np.asarray(lags, dtype=np.int64)
        values = np.asarray(values, dtype=np.float64)
        se = np.zeros_like(values) if stderr is None else np.asarray(stderr, dtype=np.float64)
        return cls(lags, values, se, values[None, :], 0)


def _covariances(f, g_orbit, lags, n):
    """Shifted-mean covariance of f[:n] with g_orbit[m:m+n] for each lag m."""
    fc = f[:n] - f[:n].mean()
    out = np.empty(len(lags))
    for k, m in enumerate(lags):
        g = g_orbit[m : m + n]
        out[k] = np.dot(fc, g - g.mean()) / n
    return out


def correlation_curve(system: MapSystem, phi: Observable, psi: Observable, lags, n,
                      replicates=DEFAULT_REPLICATES, seed=0, burn_in=None) -> CorrelationCurve:
    """Estimate E(phi . psi o T^m) - E phi E psi at each lag m.

    Replicate r uses one orbit of length n + max(lags) drawn from stream
    ``(seed, r, CORRELATION)``; the estimate is the mean over replicates and
    the error bar their standard error.
    """
    lags = np.atleast_1d(np.asarray(lags, dtype=np.int64))
    if np.any(lags < 0):
        raise ConfigurationError("lags must be >= 0")
    if n < 2:
        raise ConfigurationError("sample length must be >= 2")
    if replicates < 1:
        raise ConfigurationError("need at least one replicate")
    if burn_in is None:
        burn_in = 10_000 if system.reference_measure == "acip" else 0
    span = int(n + lags.max())
    reps = np.empty((replicates, lags.shape[0]))
    for r in range(replicates):
        x = sample_orbit(system, Orbit(length=span - 1, seed=seed, index=r, burn_in=burn_in,
                                       purpose=Purpose.CORRELATION))
        if phi.is_constant or psi.is_constant:
            # the centred sums cancel exactly; skip the round-off
            reps[r] = 0.0
        else:
            reps[r] = _covariances(phi(x), psi(x), lags, n)
    est = reps.mean(axis=0)
    if replicates >= 2:
        se = reps.std(axis=0, ddof=1) / math.sqrt(replicates)
    else:
        se = np.full(lags.shape[0], np.nan)
    return CorrelationCurve(lags, est, se, reps, int(n), replicates < 2)


def estimate_correlation(system, phi, psi, m, n, replicates=DEFAULT_REPLICATES, seed=0, burn_in=None):
    """Single-lag estimate; returns (estimate, stderr)."""
    c = correlation_curve(system, phi, psi, [m], n, replicates, seed, burn_in)
    return float(c.estimates[0]), float(c.stderr[0])


@dataclass
class DecayFit:
    model: str
    available: bool
    rate: float = math.nan  # exponent q for 'poly', base for 'exp'
    prefactor: float = math.nan
    residual: float = math.nan
    lags: Optional[np.ndarray] = None


def significant_lags(curve: CorrelationCurve, z=2.0):
    """Mask of lags whose estimate exceeds z standard errors (any nonzero value if se is 0)."""
    a = np.abs(curve.estimates)
    se = np.nan_to_num(curve.stderr, nan=0.0)
    return (a > z * se) & (a > 0)


def fit_decay_rate(curve: CorrelationCurve, model="poly", min_lags=5) -> DecayFit:
    """Least squares of log|c| against log m ('poly') or m ('exp')."""
    if model not in ("poly", "exp"):
        raise ConfigurationError(f"unknown decay model {model!r}")
    keep = significant_lags(curve)
    if model == "poly":
        keep &= curve.lags >= 1
    if keep.sum() < min_lags:
        return DecayFit(model, False, lags=curve.lags[keep])
    m = curve.lags[keep].astype(np.float64)
    y = np.log(np.abs(curve.estimates[keep]))
    x = np.log(m) if model == "poly" else m
    (slope, icpt), res, *_ = np.polyfit(x, y, 1, full=True)
    resid = float(np.sqrt(res[0])) if len(res) else 0.0
    rate = -slope if model == "poly" else math.exp(slope)
    return DecayFit(model, True, float(rate), float(math.exp(icpt)), resid, curve.lags[keep])
