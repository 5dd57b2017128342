"""Hit counting along orbits and the statistics built on S_n / E_n.

S_n counts the indices offset <= i <= n with T^i x in B_i; E_n is the sum
of the nominal target measures over the same indices.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigurationError
from .maps import DEFAULT_CHUNK, MapSystem, Orbit, initial_point, orbit_chunks
from .rng import Purpose, generator
from .targets import TargetSchedule

CSV_HEADER = "checkpoint,S,E,ratio"


def geometric_checkpoints(offset, n, ratio=1.5):
    """ceil(max(offset, 1) * ratio^k) for k >= 0, restricted to [offset, n]."""
    base = max(offset, 1)
    out = []
    k = 0
    while True:
        c = math.ceil(base * ratio**k)
        if c > n:
            break
        if c >= offset and (not out or c > out[-1]):
            out.append(c)
        k += 1
    return out


def checkpoint_grid(offset, n, ratio=1.5, extra=()):
    pts = set(geometric_checkpoints(offset, n, ratio))
    pts.update(int(e) for e in extra if offset <= e <= n)
    if n >= offset:
        pts.add(int(n))
    return np.array(sorted(pts), dtype=np.int64)


@dataclass
class HitTrace:
    checkpoints: np.ndarray
    S: np.ndarray
    E: np.ndarray
    n: int
    offset: int
    seed: int = 0
    index: int = 0
    x0: Optional[float] = None
    last_hit: int = -1
    ratio_base: float = 1.5
    probe_counts: Optional[np.ndarray] = None  # visits to each fixed probe set over offset..n

    @property
    def ratio(self):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.E > 0, self.S / self.E, np.nan)

    def at(self, n):
        """(S_n, E_n) at checkpoint n."""
        k = np.searchsorted(self.checkpoints, n)
        if k >= len(self.checkpoints) or self.checkpoints[k] != n:
            raise KeyError(f"{n} is not a checkpoint")
        return int(self.S[k]), float(self.E[k])

    def hits_between(self, a, b):
        """Hits at indices a < i <= b (both must be checkpoints, or a below the offset)."""
        sa = 0 if a < self.offset else self.at(a)[0]
        return self.at(b)[0] - sa

    def to_csv(self):
        buf = io.StringIO()
        buf.write(CSV_HEADER + "\n")
        for c, s, e, r in zip(self.checkpoints, self.S, self.E, self.ratio):
            buf.write(f"{int(c)},{int(s)},{float(e)!r},{float(r)!r}\n")
        return buf.getvalue()

    def meta(self):
        return {"index": self.index, "seed": self.seed, "x0": self.x0, "n": self.n,
                "offset": self.offset, "last_hit": self.last_hit}

    @classmethod
    def from_csv(cls, text, **meta):
        rows = [ln.split(",") for ln in text.strip().splitlines()[1:]]
        cps = np.array([int(r[0]) for r in rows], dtype=np.int64)
        S = np.array([int(r[1]) for r in rows], dtype=np.int64)
        E = np.array([float(r[2]) for r in rows])
        n = meta.pop("n", int(cps[-1]) if len(cps) else 0)
        offset = meta.pop("offset", int(cps[0]) if len(cps) else 1)
        return cls(cps, S, E, n, offset, **meta)


def run_hits(system: MapSystem, targets: TargetSchedule, orbit: Orbit, extra_checkpoints=(),
             expected=None, probes=(), chunk=DEFAULT_CHUNK) -> HitTrace:
    """Count T^i x in B_i for offset <= i <= orbit.length.

    ``expected`` may pass precomputed E values for the checkpoint grid (they
    are identical for every orbit of an ensemble).  ``probes`` are fixed sets
    whose visit counts are recorded alongside, for Birkhoff estimates of
    their measures pooled over an ensemble.
    """
    n = orbit.length
    i0 = targets.offset
    last = targets.last_index
    if last is not None and last < n:
        raise ConfigurationError(f"target schedule defined up to {last}, orbit needs {n}")
    cps = checkpoint_grid(i0, n, orbit.checkpoint_ratio, extra_checkpoints)
    S = np.zeros(cps.shape[0], dtype=np.int64)
    running = 0
    last_hit = -1
    k = 0
    pc = np.zeros(len(probes), dtype=np.int64)
    if system.kind == "iid_control":
        blocks = _iid_blocks(system, orbit, chunk)
        x0 = None
    else:
        blocks = orbit_chunks(system, orbit, chunk)
        x0 = initial_point(system, orbit) if orbit.x0 is None else orbit.x0
    for start, block in blocks:
        stop = start + block.shape[0]
        lo = max(start, i0)
        if lo < stop:
            idx = np.arange(lo, stop)
            if system.kind == "iid_control":
                mask = block[lo - start:] < system.probs.measure(idx)
            else:
                mask = targets.contains(idx, block[lo - start:])
            hits = idx[mask]
            for j, region in enumerate(probes):
                pc[j] += int(np.count_nonzero(region.contains(block[lo - start:])))
        else:
            hits = idx = np.empty(0, dtype=np.int64)
        while k < cps.shape[0] and cps[k] < stop:
            S[k] = running + np.searchsorted(hits, cps[k], side="right")
            k += 1
        running += hits.shape[0]
        if hits.shape[0]:
            last_hit = int(hits[-1])
    E = targets.schedule.cumulative(cps) if expected is None else np.asarray(expected)
    return HitTrace(cps, S, E, n, i0, orbit.seed, orbit.index, x0, last_hit, orbit.checkpoint_ratio,
                    pc if len(probes) else None)


def pooled_probe_measures(traces: Sequence[HitTrace]):
    """Ensemble Birkhoff estimates of the probe-set measures."""
    counts = np.sum([t.probe_counts for t in traces], axis=0)
    steps = sum(t.n - t.offset + 1 for t in traces)
    return counts / steps


def _iid_blocks(system, orbit, chunk):
    """Uniform draws u_i; the hit at index i is u_i < p_i."""
    rng = generator(orbit.seed, orbit.index, Purpose.IID)
    total = orbit.length + 1
    start = 0
    while start < total:
        m = min(chunk, total - start)
        yield start, rng.random(m)
        start += m


# --- ensemble statistics -------------------------------------------------


@dataclass
class EnsembleSummary:
    """Per-orbit final counts; a pure fold over traces keyed by orbit index."""

    records: list = field(default_factory=list)

    @classmethod
    def from_traces(cls, traces):
        recs = []
        for t in traces:
            recs.append({
                "index": int(t.index), "seed": int(t.seed), "x0": t.x0, "n": int(t.n),
                "S": int(t.S[-1]) if len(t.S) else 0, "E": float(t.E[-1]) if len(t.E) else 0.0,
                "last_hit": int(t.last_hit),
            })
            if t.probe_counts is not None:
                recs[-1]["probes"] = [int(v) for v in t.probe_counts]
        return cls(sorted(recs, key=lambda r: r["index"]))

    def merge(self, other: "EnsembleSummary") -> "EnsembleSummary":
        recs = sorted(self.records + other.records, key=lambda r: r["index"])
        idx = [r["index"] for r in recs]
        if len(set(idx)) != len(idx):
            raise ValueError("summaries share orbit indices")
        return EnsembleSummary(recs)

    def __len__(self):
        return len(self.records)

    def _col(self, key, dtype=np.float64):
        return np.array([r[key] for r in self.records], dtype=dtype)

    @property
    def ratios(self):
        S, E = self._col("S"), self._col("E")
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(E > 0, S / E, np.nan)

    @property
    def median_ratio(self):
        return float(np.median(self.ratios)) if self.records else math.nan

    @property
    def deviations(self):
        return self._col("S") - self._col("E")

    @property
    def variance(self):
        return float(np.var(self.deviations)) if self.records else math.nan

    @property
    def last_hits(self):
        return self._col("last_hit", np.int64)

    @property
    def plateau(self):
        """No hit in the final half (n/2, n] of the index range."""
        n = self._col("n", np.int64)
        return self.last_hits <= n // 2

    @property
    def plateau_fraction(self):
        return float(np.mean(self.plateau)) if self.records else math.nan

    def to_dict(self):
        return {
            "orbits": self.records,
            "median_ratio": self.median_ratio,
            "variance": self.variance,
            "plateau_fraction": self.plateau_fraction,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        return cls(sorted(d["orbits"], key=lambda r: r["index"]))


def sbc_report(traces: Sequence[HitTrace]) -> EnsembleSummary:
    if len(traces) < 2:
        raise ConfigurationError("an ensemble report needs at least 2 traces")
    return EnsembleSummary.from_traces(traces)


@dataclass
class VarianceRatio:
    value: float
    stderr: float
    n: int
    traces: int
    low_confidence: bool


def variance_ratio(traces: Sequence[HitTrace], n=None) -> VarianceRatio:
    """Ensemble estimate of E(S_n - E_n)^2 / E_n^2."""
    if not traces:
        raise ConfigurationError("no traces")
    n = traces[0].checkpoints[-1] if n is None else n
    pairs = [t.at(n) for t in traces]
    S = np.array([p[0] for p in pairs], dtype=np.float64)
    E = pairs[0][1]
    sq = (S - E) ** 2
    se = float(np.std(sq, ddof=1) / math.sqrt(len(sq))) / E**2 if len(sq) > 1 else math.inf
    return VarianceRatio(float(np.mean(sq)) / E**2, se, int(n), len(traces), len(traces) < 30)


@dataclass
class SprindzukResult:
    passed: bool
    c_fitted: float
    c_per_orbit: np.ndarray
    checkpoints: np.ndarray
    required: np.ndarray  # ensemble max of |S - E| / bound per checkpoint (nan when inactive)
    grows: bool
    quantile: float
    eps: float


def sprindzuk_bound(theta, eps):
    """theta^(1/2) log(theta)^(3/2 + eps); nan where theta <= 1."""
    theta = np.asarray(theta, dtype=np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        b = np.sqrt(theta) * np.log(theta) ** (1.5 + eps)
    return np.where(theta > 1.0, b, np.nan)


def sprindzuk_monitor(traces: Sequence[HitTrace], eps, c_max=None, quantile=0.99) -> SprindzukResult:
    """Fit C in |S_n - E_n| <= C theta(n)^(1/2) log^(3/2+eps) theta(n), with theta = E.

    The per-orbit constant is the largest ratio over active checkpoints; the
    ensemble constant is its ``quantile``.  The monitor fails when that
    constant exceeds ``c_max`` or when the required constant is still
    growing: the worst ratio over the final third of active checkpoints
    exceeding the worst ratio before it.
    """
    if eps <= 0:
        raise ConfigurationError("eps must be positive")
    cps = traces[0].checkpoints
    bound = sprindzuk_bound(traces[0].E, eps)
    active = np.isfinite(bound)
    dev = np.array([np.abs(t.S - t.E) for t in traces])
    with np.errstate(invalid="ignore", divide="ignore"):
        req = np.where(active, dev / bound, np.nan)
    worst = np.full(cps.shape, np.nan)
    if active.any():
        per_orbit = req[:, active].max(axis=1)
        worst[active] = req[:, active].max(axis=0)
    else:
        per_orbit = np.zeros(len(traces))
    c_fit = float(np.quantile(per_orbit, quantile)) if len(per_orbit) else 0.0
    act = np.flatnonzero(active)
    grows = False
    if act.shape[0] >= 3:
        cut = act[len(act) - max(1, len(act) // 3)]
        early = np.nanmax(worst[act[act < cut]])
        late = np.nanmax(worst[act[act >= cut]])
        grows = bool(late > early)
    passed = (not grows) and (c_max is None or c_fit <= c_max)
    return SprindzukResult(passed, c_fit, per_orbit, cps, worst, grows, quantile, eps)


def zero_one_check(traces: Sequence[HitTrace], threshold=0.9):
    """Classify an ensemble by hits in the final decade (n/10, n].

    Returns ``'bc'`` when at least ``threshold`` of the orbits still hit there,
    ``'plateau'`` when at least ``threshold`` do not, and ``'undersized'``
    otherwise: the hit set is invariant, so a mixed outcome means the run is
    too short rather than that the dichotomy fails.
    """
    keep = np.mean([t.last_hit > t.n // 10 for t in traces])
    if keep >= threshold:
        return "bc"
    if 1.0 - keep >= threshold:
        return "plateau"
    return "undersized"


def strict_growth(trace: HitTrace, count=3):
    """S strictly increasing across the last ``count`` geometric checkpoints."""
    geo = geometric_checkpoints(trace.offset, trace.n, trace.ratio_base)
    if len(geo) < count:
        return False
    s = [trace.at(c)[0] for c in geo[-count:]]
    return all(b > a for a, b in zip(s, s[1:]))


def growth_fraction(traces: Sequence[HitTrace], count=3):
    return float(np.mean([strict_growth(t, count) for t in traces]))


def iid_variance_closed_form(probs, offset, n):
    """sum p_i (1 - p_i) / E_n^2 for independent hits, i = offset .. n."""
    i = np.arange(offset, n + 1)
    p = np.asarray(probs.measure(i), dtype=np.float64)
    return float(np.sum(p * (1 - p)) / np.sum(p) ** 2)
