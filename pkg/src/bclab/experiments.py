"""Run presets across an orbit ensemble, write outputs and a manifest, and report checks.

Orbit ``k`` of a run always uses the random stream ``(seed, k, purpose)``, so
the values written never depend on how orbits are spread over workers.
Workers take contiguous blocks of orbit indices.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import shutil
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .bc_stats import (HitTrace, EnsembleSummary, checkpoint_grid, growth_fraction, iid_variance_closed_form,
                       pooled_probe_measures, run_hits, sprindzuk_monitor, variance_ratio)
from .config import ExperimentConfig, render
from .errors import BCLabError, ConfigurationError, ReportError
from .maps import MapSystem, Orbit, chmv_backward_sequence
from .returns import return_law_sweep, short_return_mass
from .rng import Purpose, stream_key
from .targets import (Ball, MeasureSchedule, TargetSchedule, calibrate_radii, chmv_targets, kim_interval,
                      kim_targets, lebesgue_balls)

log = logging.getLogger(__name__)

WORKERS_ENV = "BCLAB_WORKERS"
KIM_PROBES = (10, 30, 100, 300, 1000)
KIM_BAND = (0.3, 1.0)


class RunError(BCLabError):
    """Writing run outputs failed; partial outputs were removed."""


# --- building blocks -----------------------------------------------------


def build_system(c: ExperimentConfig) -> MapSystem:
    if c.map == "lsv":
        return MapSystem.lsv(c.alpha)
    if c.map == "chmv":
        return MapSystem.chmv(c.gamma)
    if c.map == "doubling":
        return MapSystem.doubling()
    return MapSystem.iid_control(build_schedule(c))


def build_schedule(c: ExperimentConfig) -> MeasureSchedule:
    gamma = c.exponent if c.schedule == "power" else None
    return MeasureSchedule(c.schedule, gamma=gamma, offset=c.offset)


def build_targets(c: ExperimentConfig, system: MapSystem) -> TargetSchedule:
    """Target family for an ensemble run (schedule fields are ignored by interval families)."""
    if c.construction == "kim_interval":
        return kim_targets(c.alpha)
    if c.construction == "chmv_interval":
        return chmv_targets(chmv_backward_sequence(c.gamma, c.length))
    sched = build_schedule(c)
    if c.construction == "calibrated_ball":
        return calibrate_radii(system, c.center, sched, c.length, c.calibration_length, seed=c.seed)
    center = 0.5 if c.center is None else c.center
    return lebesgue_balls(system, center, sched)


def worker_count(requested=None):
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigurationError(f"{WORKERS_ENV} must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def worker_blocks(ensemble, workers):
    """Contiguous [start, end) index ranges, one per worker (empty ones dropped)."""
    per = -(-ensemble // workers) if ensemble else 0
    return [(w, w * per, min(ensemble, (w + 1) * per)) for w in range(workers) if w * per < ensemble]


def extra_checkpoints(c: ExperimentConfig):
    return (c.late_window,) if c.late_window else ()


def run_ensemble(c: ExperimentConfig, workers=None, system=None, targets=None):
    """All traces of the run, ordered by orbit index."""
    system = build_system(c) if system is None else system
    targets = build_targets(c, system) if targets is None else targets
    cps = checkpoint_grid(targets.offset, c.length, 1.5, extra_checkpoints(c))
    expected = targets.schedule.cumulative(cps)
    probes = [kim_interval(c.alpha, n) for n in KIM_PROBES] if c.construction == "kim_interval" else ()

    def block(rng_block):
        _, lo, hi = rng_block
        return [run_hits(system, targets, Orbit(length=c.length, seed=c.seed, index=k, burn_in=c.burn_in),
                         extra_checkpoints(c), expected, probes) for k in range(lo, hi)]

    blocks = worker_blocks(c.ensemble, worker_count(workers))
    if len(blocks) <= 1:
        out = [block(b) for b in blocks]
    else:
        with ThreadPoolExecutor(max_workers=len(blocks)) as ex:
            out = list(ex.map(block, blocks))
    return [t for part in out for t in part]


# --- checks --------------------------------------------------------------


@dataclass
class Check:
    name: str
    passed: bool
    detail: str

    def line(self):
        return f"{self.name}: {self.detail}: {'PASS' if self.passed else 'FAIL'}"


def ensemble_checks(c: ExperimentConfig, traces, summary: EnsembleSummary):
    checks = []
    if not traces:
        return checks
    if c.median_lo is not None or c.median_hi is not None:
        lo = -math.inf if c.median_lo is None else c.median_lo
        hi = math.inf if c.median_hi is None else c.median_hi
        m = summary.median_ratio
        checks.append(Check("SBC ratio median", lo <= m <= hi, f"{m:.4f} in [{lo}, {hi}]"))
    if c.variance_max is not None:
        v = variance_ratio(traces)
        checks.append(Check("variance ratio", v.value < c.variance_max,
                            f"{v.value:.5f} +- {v.stderr:.5f} < {c.variance_max}"))
    if c.map == "iid_control":
        v = variance_ratio(traces)
        exact = iid_variance_closed_form(build_schedule(c), traces[0].offset, c.length)
        checks.append(Check("variance ratio vs closed form", abs(v.value - exact) <= 3 * v.stderr,
                            f"{v.value:.6f} vs {exact:.6f} (3 se = {3 * v.stderr:.6f})"))
    if c.sprindzuk_eps is not None:
        s = sprindzuk_monitor(traces, c.sprindzuk_eps, c.sprindzuk_c_max)
        checks.append(Check("error-term monitor", s.passed,
                            f"fitted C {s.c_fitted:.3f} <= {c.sprindzuk_c_max}, growing={s.grows}"))
    if c.growth_min is not None:
        g = growth_fraction(traces)
        checks.append(Check("strict growth over last 3 checkpoints", g >= c.growth_min,
                            f"{g:.3f} of orbits >= {c.growth_min}"))
    if c.late_window is not None and c.plateau_min is not None:
        z = float(np.mean([t.last_hit <= c.late_window for t in traces]))
        checks.append(Check("plateau fraction", z >= c.plateau_min,
                            f"{z:.3f} of orbits without hits in ({c.late_window}, {c.length}] >= {c.plateau_min}"))
    if c.expected_min is not None:
        e = float(traces[0].E[-1])
        checks.append(Check("expected hits", e > c.expected_min, f"E_n = {e:.2f} > {c.expected_min}"))
    if traces[0].probe_counts is not None:
        band = kim_band(traces)
        ok = bool(np.all((band >= KIM_BAND[0]) & (band <= KIM_BAND[1])))
        checks.append(Check("n mu(A_n) band", ok,
                            f"{np.array2string(band, precision=3)} within {list(KIM_BAND)}"))
    return checks


def kim_band(traces):
    return np.array(KIM_PROBES) * pooled_probe_measures(traces)


# --- running -------------------------------------------------------------


def _write(path: Path, text, written):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    written.append(path)


def _digest(path: Path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def has_work(c: ExperimentConfig):
    return (c.kind == "ensemble" and c.ensemble > 0) or c.preset == "thm3_returns"


def run_experiment(c: ExperimentConfig, workers=None, output=None):
    """Execute the preset, write all outputs and return the manifest dict."""
    out = Path(output if output is not None else c.output)
    nworkers = worker_count(workers)
    t0 = time.time()
    written = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        if has_work(c):
            _write(out / "config.ini", render(c), written)
        if c.kind == "ensemble" and c.ensemble > 0:
            system = build_system(c)
            targets = build_targets(c, system)
            traces = run_ensemble(c, nworkers, system, targets)
            for t in traces:
                _write(out / "traces" / f"orbit_{t.index:05d}.csv", t.to_csv(), written)
            ens = EnsembleSummary.from_traces(traces).to_dict()
            if traces and traces[0].probe_counts is not None:
                ens["probe_n"] = list(KIM_PROBES)
            _write(out / "ensemble.json", json.dumps(ens, indent=1, sort_keys=True), written)
        if c.preset == "thm3_returns":
            _run_returns(c, out, written)
        if c.short_index is not None and has_work(c):
            _run_short(c, out, written)
        wall = time.time() - t0
        manifest = _manifest(c, out, written, nworkers, wall)
        (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    except OSError as e:
        for p in written:
            try:
                p.unlink()
            except OSError:
                pass
        raise RunError(f"writing outputs under {out} failed: {e}") from e
    return manifest


def _run_returns(c, out, written):
    system = build_system(c)
    radii = [2.0**-j for j in c.radii_exponents()]
    sweep = return_law_sweep(system, c.center, radii, c.return_samples, seed=c.seed)
    rep = {"radii": radii, "reports": [r.to_dict() for r in sweep.reports],
           "ks_non_increasing": sweep.non_increasing}
    for j, (s, r) in enumerate(zip(sweep.samples, sweep.reports)):
        _write(out / "returns" / f"generic_{j:02d}.csv", s.to_csv(), written)
        _write(out / "returns" / f"generic_cdf_{j:02d}.csv", r.cdf_csv(), written)
    if c.periodic_center is not None:
        ctrl = return_law_sweep(system, c.periodic_center, radii[-1:], c.return_samples, seed=c.seed + 1)
        rep["periodic"] = ctrl.reports[0].to_dict()
        _write(out / "returns" / "periodic_cdf.csv", ctrl.reports[0].cdf_csv(), written)
    _write(out / "returns.json", json.dumps(rep, indent=1, sort_keys=True), written)


def _run_short(c, out, written):
    system = build_system(c)
    center = c.short_center if c.short_center is not None else c.center
    ball = Ball(center, 0.5 / c.short_index * system.period, system.period)
    res = short_return_mass(system, ball, c.short_index, c.short_k, c.short_length, seed=c.seed)
    _write(out / "short_returns.json", json.dumps(res.to_dict(), indent=1, sort_keys=True), written)


def _manifest(c, out, written, nworkers, wall):
    files = {str(p.relative_to(out)): _digest(p) for p in sorted(written)}
    blocks = worker_blocks(c.ensemble, nworkers) if c.kind == "ensemble" else []
    return {
        "artifact_version": __version__,
        "preset": c.preset,
        "config_hash": c.digest(),
        "master_seed": c.seed,
        "rng": "numpy Philox, key = seed + 2^64 * ((orbit index << 16) | purpose)",
        "workers": [
            {"worker": w, "start": lo, "end": hi,
             "stream_keys": [str(stream_key(c.seed, k, Purpose.ORBIT)) for k in (lo, hi - 1)]}
            for w, lo, hi in blocks
        ],
        "ensemble": c.ensemble,
        "files": files,
        "wall_clock_seconds": wall,
    }


# --- reporting -----------------------------------------------------------


def load_manifest(directory):
    path = Path(directory) / "manifest.json"
    if not path.exists():
        raise ReportError(f"no manifest at {path}")
    return json.loads(path.read_text())


def verify_files(directory, manifest):
    """Names of listed files that are missing or whose digest changed."""
    bad = []
    for name, digest in manifest["files"].items():
        p = Path(directory) / name
        if not p.exists():
            bad.append(f"missing {name}")
        elif _digest(p) != digest:
            bad.append(f"digest mismatch {name}")
    return bad


def load_traces(directory, records):
    """Rebuild traces from their CSVs plus the per-orbit records of ensemble.json."""
    d = Path(directory)
    traces = []
    for r in records:
        f = d / "traces" / f"orbit_{r['index']:05d}.csv"
        t = HitTrace.from_csv(f.read_text(), index=r["index"], seed=r["seed"], x0=r["x0"], n=r["n"],
                              last_hit=r["last_hit"])
        if "probes" in r:
            t.probe_counts = np.array(r["probes"], dtype=np.int64)
        traces.append(t)
    return traces


def report(directory, bundle=None):
    """Recompute the embedded checks from a run directory.

    Returns (lines, checks).  When ``bundle`` is given, plot-ready CSVs are
    written there.
    """
    from .config import parse

    d = Path(directory)
    manifest = load_manifest(d)
    gaps = verify_files(d, manifest)
    if gaps:
        raise ReportError("run outputs incomplete: " + "; ".join(gaps))
    if not manifest["files"]:
        return ["nothing to report"], []
    c = parse((d / "config.ini").read_text())
    lines = [f"preset {c.preset}: {c.ensemble} orbits of length {c.length}, seed {c.seed}"]
    checks = []
    if (d / "ensemble.json").exists():
        ens = json.loads((d / "ensemble.json").read_text())
        summary = EnsembleSummary.from_dict(ens)
        traces = load_traces(d, summary.records)
        lines.append(f"plateau fraction (no hits in final half): {summary.plateau_fraction:.3f}")
        checks += ensemble_checks(c, traces, summary)
        if bundle is not None:
            _bundle_ratios(Path(bundle), traces)
    if (d / "returns.json").exists():
        checks += _returns_checks(c, json.loads((d / "returns.json").read_text()))
        if bundle is not None:
            b = Path(bundle)
            b.mkdir(parents=True, exist_ok=True)
            for f in sorted((d / "returns").glob("*cdf*.csv")):
                shutil.copy(f, b / f.name)
    if (d / "short_returns.json").exists():
        s = json.loads((d / "short_returns.json").read_text())
        checks.append(Check("short returns rare (eta > 0)", s["eta"] > 0 and not s["not_rare"],
                            f"eta {s['eta']:.3f} +- {s['eta_stderr']:.3f}"))
    lines += [ch.line() for ch in checks]
    return lines, checks


def _returns_checks(c, rep):
    out = []
    small = rep["reports"][-1]
    if c.ks_max is not None:
        out.append(Check("K-S distance at smallest radius", small["ks"] < c.ks_max,
                         f"{small['ks']:.4f} < {c.ks_max}"))
    out.append(Check("Kac mean", 0.95 <= small["kac_nominal"] <= 1.05, f"{small['kac_nominal']:.4f} in [0.95, 1.05]"))
    out.append(Check("K-S trend non-increasing", bool(rep["ks_non_increasing"]), "within 95% bands"))
    if "periodic" in rep and c.small_mass_min is not None:
        f = rep["periodic"]["small_mass"]
        out.append(Check("periodic-center control F(0.1)", f > c.small_mass_min, f"{f:.3f} > {c.small_mass_min}"))
    return out


def _bundle_ratios(bundle: Path, traces):
    bundle.mkdir(parents=True, exist_ok=True)
    cps = traces[0].checkpoints
    ratios = np.array([t.ratio for t in traces])
    with np.errstate(all="ignore"):
        med = np.nanmedian(ratios, axis=0) if len(traces) else cps * np.nan
    lines = ["n,E,median_ratio,min_ratio,max_ratio"]
    for k, n in enumerate(cps):
        col = ratios[:, k]
        lines.append(f"{int(n)},{float(traces[0].E[k])!r},{float(med[k])!r},{float(np.nanmin(col)) if np.isfinite(col).any() else float('nan')!r},"
                     f"{float(np.nanmax(col)) if np.isfinite(col).any() else float('nan')!r}")
    (bundle / "ratio_series.csv").write_text("\n".join(lines) + "\n")
