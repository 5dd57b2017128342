"""Shrinking-target families: measure schedules, balls, explicit interval families."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import CalibrationError, ConfigurationError
from .maps import (
    BackwardSequences,
    MapSystem,
    Orbit,
    chmv_backward_sequence,
    orbit_chunks,
    sample_orbit,
)
from .rng import Purpose

SCHEDULE_KINDS = ("power", "log_over_i", "harmonic", "i_log_i", "explicit")
CONSTRUCTIONS = ("calibrated_ball", "lebesgue_ball", "kim_interval", "chmv_interval", "chmv_b_interval")
DEFAULT_BURN_IN = 10_000
_SUM_BLOCK = 1 << 22


@dataclass(frozen=True)
class MeasureSchedule:
    """Target measures mu_i for i >= offset.

    ``power`` is ``i^-gamma``, ``log_over_i`` is ``log(i)/i``, ``harmonic``
    is ``1/i``, ``i_log_i`` is ``1/(i log i)``; ``explicit`` reads
    ``values[i - offset]``.
    """

    kind: str
    gamma: Optional[float] = None
    offset: Optional[int] = None
    values: Optional[tuple] = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ConfigurationError(f"unknown schedule kind {self.kind!r}")
        if self.offset is None:
            # log(i)/i peaks at e, so it is non-increasing only from i = 3
            object.__setattr__(self, "offset", {"log_over_i": 3, "i_log_i": 2}.get(self.kind, 1))
        if self.kind == "power" and (self.gamma is None or not 0.0 < self.gamma < 1.0):
            raise ConfigurationError(f"power schedule needs 0 < gamma < 1, got {self.gamma}")
        if self.kind in ("log_over_i", "i_log_i") and self.offset < 2:
            raise ConfigurationError("schedules involving log i need offset >= 2")
        if self.kind in ("power", "harmonic") and self.offset < 1:
            raise ConfigurationError("offset must be >= 1")
        if self.kind == "explicit":
            if self.values is None:
                raise ConfigurationError("explicit schedule needs values")
            v = np.asarray(self.values, dtype=np.float64)
            if v.ndim != 1 or np.any(v < 0) or np.any(v > 1) or np.any(np.diff(v) > 0):
                raise ConfigurationError("explicit measures must be in [0, 1] and non-increasing")
            v.setflags(write=False)
            object.__setattr__(self, "values", v)

    @property
    def last_index(self):
        """Largest index with a defined measure (None = unbounded)."""
        if self.kind == "explicit":
            return self.offset + len(self.values) - 1
        return None

    def measure(self, i):
        """Vectorised mu_i; raises IndexError for indices before ``offset``."""
        arr = np.asarray(i)
        if np.any(arr < self.offset):
            raise IndexError(f"schedule index below offset {self.offset}")
        f = arr.astype(np.float64)
        if self.kind == "power":
            out = f**-self.gamma
        elif self.kind == "harmonic":
            out = 1.0 / f
        elif self.kind == "log_over_i":
            out = np.log(f) / f
        elif self.kind == "i_log_i":
            out = 1.0 / (f * np.log(f))
        else:
            last = self.last_index
            if np.any(arr > last):
                raise IndexError(f"explicit schedule defined only up to index {last}")
            out = self.values[arr - self.offset]
        return float(out) if np.ndim(out) == 0 else out

    def cumulative(self, ns):
        """E_n = sum_{offset <= i <= n} mu_i for each n in the sorted array ``ns``."""
        ns = np.asarray(ns, dtype=np.int64)
        if np.any(np.diff(ns) < 0):
            raise ValueError("checkpoints must be sorted")
        out = np.zeros(ns.shape[0])
        total = 0.0
        i = self.offset
        for k, n in enumerate(ns):
            while i <= n:
                j = min(n, i + _SUM_BLOCK - 1)
                total += float(np.sum(self.measure(np.arange(i, j + 1))))
                i = j + 1
            out[k] = total
        return out

    def to_dict(self):
        d = {"kind": self.kind, "offset": self.offset}
        if self.gamma is not None:
            d["gamma"] = self.gamma
        if self.kind == "explicit":
            d["values"] = [float(v) for v in self.values]
        return d

    @classmethod
    def from_dict(cls, d):
        vals = d.get("values")
        return cls(d["kind"], gamma=d.get("gamma"), offset=d.get("offset"),
                   values=None if vals is None else np.asarray(vals, dtype=np.float64))


def schedule_measure(s: MeasureSchedule, i):
    return s.measure(i)


def expected_hits(s: MeasureSchedule, n):
    """Partial sum of schedule measures from the offset up to ``n`` (0 when n < offset)."""
    if n < s.offset:
        return 0.0
    return float(s.cumulative([n])[0])


# --- regions -------------------------------------------------------------


@dataclass(frozen=True)
class Interval:
    """Interval ``lo .. hi`` with configurable endpoint closure."""

    lo: float
    hi: float
    left_closed: bool = True
    right_closed: bool = False

    @property
    def length(self):
        return max(0.0, self.hi - self.lo)

    def contains(self, x):
        x = np.asarray(x)
        left = x >= self.lo if self.left_closed else x > self.lo
        right = x <= self.hi if self.right_closed else x < self.hi
        return left & right

    def measure(self, system: MapSystem):
        """Lebesgue probability of the interval (meaningful for Lebesgue-invariant maps)."""
        return self.length / system.period

    def expanded(self, eps):
        return Interval(self.lo - eps, self.hi + eps, True, True)


@dataclass(frozen=True)
class Ball:
    """Open circle arc ``{x : d(x, center) < radius}``."""

    center: float
    radius: float
    period: float = 1.0

    @property
    def length(self):
        return min(2.0 * self.radius, self.period) if self.radius > 0 else 0.0

    def contains(self, x):
        d = np.abs(np.asarray(x, dtype=np.float64) - self.center)
        d = np.minimum(d, self.period - d)
        return d < self.radius

    def measure(self, system: MapSystem):
        return self.length / system.period


def kim_interval(alpha, n):
    """[0, n^(-1/(1 - alpha)))."""
    if not 0.0 < alpha < 1.0:
        raise ConfigurationError(f"need 0 < alpha < 1, got {alpha}")
    if n < 1:
        raise ConfigurationError("n must be >= 1")
    return Interval(0.0, float(n) ** (-1.0 / (1.0 - alpha)), True, False)


def chmv_interval(seq: BackwardSequences, n):
    """The arc (-1, a_{-n})."""
    if not 0 <= n <= seq.n:
        raise IndexError(f"n={n} outside 0..{seq.n}")
    return Interval(-1.0, float(seq.a[n]), False, False)


def chmv_b_interval(seq: BackwardSequences, n):
    """The interval (0, b_n)."""
    return Interval(0.0, seq.b_at(n), False, False)


# --- target schedules ----------------------------------------------------


@dataclass
class TargetSchedule:
    """A nested family B_i, i >= schedule.offset, with nominal measures mu_i.

    Balls about ``center`` use either explicit radii (``radii[i - offset]``,
    e.g. from :func:`calibrate_radii`) or, for Lebesgue-invariant maps,
    the exact radius ``mu_i * period / 2``.
    """

    construction: str
    schedule: MeasureSchedule
    center: Optional[float] = None
    radii: Optional[np.ndarray] = None
    period: float = 1.0
    alpha: Optional[float] = None
    seq: Optional[BackwardSequences] = field(default=None, repr=False)
    reference: str = "invariant"

    def __post_init__(self):
        if self.construction not in CONSTRUCTIONS:
            raise ConfigurationError(f"unknown construction {self.construction!r}")
        if self.construction.endswith("ball") and self.center is None:
            raise ConfigurationError("balls need a center")
        if self.construction == "calibrated_ball":
            if self.radii is None:
                raise ConfigurationError("calibrated balls need radii")
            self.radii = np.asarray(self.radii, dtype=np.float64)
        if self.construction == "kim_interval" and not (self.alpha and 0 < self.alpha < 1):
            raise ConfigurationError("kim intervals need 0 < alpha < 1")
        if self.construction.startswith("chmv") and self.seq is None:
            raise ConfigurationError("chmv intervals need a backward sequence")

    @property
    def offset(self):
        return self.schedule.offset

    @property
    def last_index(self):
        """Largest index with a defined target (None = unbounded)."""
        cands = []
        if self.radii is not None:
            cands.append(self.offset + len(self.radii) - 1)
        if self.seq is not None:
            cands.append(self.seq.n)
        if self.schedule.last_index is not None:
            cands.append(self.schedule.last_index)
        return min(cands) if cands else None

    def measure(self, i):
        return self.schedule.measure(i)

    def radius(self, i):
        i = np.asarray(i)
        if self.construction == "calibrated_ball":
            return self.radii[i - self.offset]
        if self.construction == "lebesgue_ball":
            mu = np.asarray(self.measure(i), dtype=np.float64)
            return np.where(mu >= 1.0, np.inf, mu * (self.period / 2.0))
        raise ConfigurationError(f"{self.construction} targets are intervals, not balls")

    def bounds(self, i):
        """(lo, hi) arrays for interval constructions."""
        i = np.asarray(i)
        if self.construction == "kim_interval":
            hi = i.astype(np.float64) ** (-1.0 / (1.0 - self.alpha))
            return np.zeros_like(hi), hi
        if self.construction == "chmv_interval":
            return np.full(i.shape, -1.0), self.seq.a[i]
        if self.construction == "chmv_b_interval":
            return np.zeros(i.shape), self.seq.b[i - 1]
        raise ConfigurationError(f"{self.construction} targets are balls, not intervals")

    def target(self, i):
        """The single region B_i."""
        if self.construction.endswith("ball"):
            return Ball(self.center, float(self.radius(i)), self.period)
        if self.construction == "kim_interval":
            return kim_interval(self.alpha, i)
        if self.construction == "chmv_interval":
            return chmv_interval(self.seq, i)
        return chmv_b_interval(self.seq, i)

    def contains(self, i, x):
        """Vectorised membership x_k in B_{i_k}."""
        x = np.asarray(x, dtype=np.float64)
        if self.construction.endswith("ball"):
            d = np.abs(x - self.center)
            d = np.minimum(d, self.period - d)
            return d < self.radius(i)
        lo, hi = self.bounds(i)
        if self.construction == "kim_interval":
            return (x >= lo) & (x < hi)
        return (x > lo) & (x < hi)

    def is_nested(self, i_max):
        """Exact containment B_{i+1} within B_i for offset <= i < i_max."""
        idx = np.arange(self.offset, i_max + 1)
        if self.construction.endswith("ball"):
            r = self.radius(idx)
            return bool(np.all(r[1:] <= r[:-1]))
        lo, hi = self.bounds(idx)
        return bool(np.all(lo[1:] >= lo[:-1]) and np.all(hi[1:] <= hi[:-1]))

    def to_dict(self):
        d = {
            "construction": self.construction,
            "schedule": self.schedule.to_dict(),
            "period": self.period,
            "reference": self.reference,
        }
        if self.center is not None:
            d["center"] = self.center
        if self.radii is not None:
            d["radii"] = [float(r) for r in self.radii]
        if self.alpha is not None:
            d["alpha"] = self.alpha
        if self.seq is not None:
            d["gamma"] = self.seq.gamma
            d["n"] = self.seq.n
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        seq = None
        if "gamma" in d:
            seq = chmv_backward_sequence(d["gamma"], d["n"])
        radii = d.get("radii")
        return cls(
            d["construction"],
            MeasureSchedule.from_dict(d["schedule"]),
            center=d.get("center"),
            radii=None if radii is None else np.asarray(radii, dtype=np.float64),
            period=d.get("period", 1.0),
            alpha=d.get("alpha"),
            seq=seq,
            reference=d.get("reference", "invariant"),
        )

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def lebesgue_balls(system: MapSystem, center, schedule: MeasureSchedule):
    if system.reference_measure != "lebesgue":
        raise ConfigurationError("exact Lebesgue balls need a Lebesgue-invariant map")
    return TargetSchedule("lebesgue_ball", schedule, center=center, period=system.period,
                          reference="lebesgue")


def kim_targets(alpha):
    """Kim's family [0, n^(-1/(1-alpha))), n >= 1, with nominal measure 1/n."""
    return TargetSchedule("kim_interval", MeasureSchedule("harmonic"), alpha=alpha)


def chmv_targets(seq: BackwardSequences):
    """Arcs (-1, a_{-n}), n >= 1, with their normalised Lebesgue measures."""
    values = seq.lengths()[1:] / 2.0
    return TargetSchedule("chmv_interval", MeasureSchedule("explicit", offset=1, values=values),
                          seq=seq, period=2.0, reference="lebesgue")


def chmv_b_targets(seq: BackwardSequences):
    values = seq.b / 2.0
    return TargetSchedule("chmv_b_interval", MeasureSchedule("explicit", offset=1, values=values),
                          seq=seq, period=2.0, reference="lebesgue")


def _default_burn_in(system):
    return DEFAULT_BURN_IN if system.reference_measure != "lebesgue" else 0


def calibrate_radii(system: MapSystem, center, schedule: MeasureSchedule, i_max, length,
                    seed=0, burn_in=None, min_points=100) -> TargetSchedule:
    """Radii r_i with empirical mu(B(center, r_i)) = mu_i along one long orbit.

    r_i is the order statistic of the orbit's distances to ``center`` below
    which a fraction mu_i of the samples lie; the radii are then replaced by
    their running minimum so that the balls are nested.
    """
    if i_max < schedule.offset:
        raise ConfigurationError("i_max must be >= the schedule offset")
    mu = np.asarray(schedule.measure(np.arange(schedule.offset, i_max + 1)), dtype=np.float64)
    if mu[-1] * length < min_points:
        raise CalibrationError(
            f"calibration orbit of length {length} puts ~{mu[-1] * length:.1f} points in the "
            f"smallest ball; need at least {min_points}"
        )
    burn_in = _default_burn_in(system) if burn_in is None else burn_in
    orbit = Orbit(length=int(length) - 1, seed=seed, index=0, burn_in=burn_in)
    d = np.sort(system.distance(_sample(system, orbit, Purpose.CALIBRATION), center))
    k = np.rint(mu * d.shape[0]).astype(np.int64)
    radii = np.where(k >= d.shape[0], np.inf, d[np.minimum(k, d.shape[0] - 1)])
    radii = np.minimum.accumulate(radii)
    return TargetSchedule("calibrated_ball", schedule, center=center, radii=radii,
                          period=system.period)


def _sample(system, orbit, purpose):
    return sample_orbit(system, _purposed(orbit, purpose))


def _purposed(orbit: Orbit, purpose):
    return Orbit(x0=orbit.x0, length=orbit.length, seed=orbit.seed, index=orbit.index,
                 burn_in=orbit.burn_in, purpose=purpose)


def empirical_measure(system: MapSystem, region, length, seed=0, burn_in=None,
                      purpose=Purpose.VALIDATION):
    """Birkhoff-average estimate of mu(region) along one orbit."""
    burn_in = _default_burn_in(system) if burn_in is None else burn_in
    orbit = _purposed(Orbit(length=int(length) - 1, seed=seed, burn_in=burn_in), purpose)
    hits = 0
    for _, xs in orbit_chunks(system, orbit):
        hits += int(np.count_nonzero(region.contains(xs)))
    return hits / length


# --- property (B) --------------------------------------------------------


@dataclass
class AnnulusEstimate:
    measure: float
    hits: int
    samples: int
    resolved: bool


def _annulus_counts(d, r, eps):
    return int(np.count_nonzero((d > r) & (d < r + eps)))


def annulus_measure_estimate(system: MapSystem, center, r, eps, length, seed=0, burn_in=None):
    """Birkhoff estimate of mu{x : r < d(x, center) < r + eps}."""
    if eps < 0 or r < 0:
        raise ConfigurationError("r and eps must be non-negative")
    if eps == 0:
        return AnnulusEstimate(0.0, 0, int(length), True)
    d = _annulus_distances(system, center, length, seed, burn_in)
    hits = _annulus_counts(d, r, eps)
    return AnnulusEstimate(hits / d.shape[0], hits, d.shape[0], hits > 0)


def _annulus_distances(system, center, length, seed, burn_in):
    burn_in = _default_burn_in(system) if burn_in is None else burn_in
    orbit = _purposed(Orbit(length=int(length) - 1, seed=seed, burn_in=burn_in), Purpose.ANNULUS)
    return system.distance(sample_orbit(system, orbit), center)


@dataclass
class AnnulusFit:
    delta: float
    intercept: float
    eps: np.ndarray
    r: np.ndarray
    measures: np.ndarray
    hits: np.ndarray
    used: np.ndarray  # mask of grid points entering the regression


def fit_annulus_exponent(system: MapSystem, center, eps_grid, length, r=None, seed=0,
                         burn_in=None, min_hits=20) -> AnnulusFit:
    """Regress log annulus measure on log eps to estimate the exponent delta.

    With ``r=None`` each annulus starts at r = eps, the tightest radius the
    annulus bound allows; near a singular density point that is where the
    measure is largest relative to eps.
    """
    eps = np.asarray(eps_grid, dtype=np.float64)
    rr = eps.copy() if r is None else np.broadcast_to(np.asarray(r, dtype=np.float64), eps.shape)
    d = np.sort(_annulus_distances(system, center, length, seed, burn_in))
    lo = np.searchsorted(d, rr, side="right")
    hi = np.searchsorted(d, rr + eps, side="left")
    hits = np.maximum(hi - lo, 0)
    meas = hits / d.shape[0]
    used = hits >= min_hits
    if used.sum() < 2:
        return AnnulusFit(math.nan, math.nan, eps, rr, meas, hits, used)
    slope, icept = np.polyfit(np.log(eps[used]), np.log(meas[used]), 1)
    return AnnulusFit(float(slope), float(icept), eps, rr, meas, hits, used)
