"""Experiment configuration: presets, the sectioned ``key = value`` file format and validation."""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
import math
from dataclasses import dataclass, fields
from typing import Optional

from .errors import ConfigurationError

PRESETS = ("thm1", "thm2", "thm3_returns", "thm4_short", "kim_counterexample", "chmv_counterexample",
           "prop1_expanding", "iid_baseline", "custom")

GOLDEN_CENTER = (math.sqrt(5.0) - 1.0) / 2.0

# field -> config-file section
_SECTIONS = {
    "preset": "experiment", "ensemble": "experiment", "length": "experiment", "seed": "experiment",
    "output": "experiment", "burn_in": "experiment",
    "map": "map", "alpha": "map", "gamma": "map",
    "schedule": "schedule", "exponent": "schedule", "offset": "schedule",
    "construction": "targets", "center": "targets", "calibration_length": "targets",
    "late_window": "checks", "sprindzuk_eps": "checks", "sprindzuk_c_max": "checks",
    "median_lo": "checks", "median_hi": "checks", "variance_max": "checks", "growth_min": "checks",
    "plateau_min": "checks", "expected_min": "checks",
    "return_samples": "returns", "return_radii": "returns", "ks_max": "returns",
    "periodic_center": "returns", "small_mass_min": "returns",
    "short_index": "short", "short_k": "short", "short_length": "short",
    "short_center": "short",
}


@dataclass(frozen=True)
class ExperimentConfig:
    preset: str = "custom"
    ensemble: int = 8
    length: int = 10**5
    seed: int = 0
    output: str = "runs/out"
    burn_in: int = 0
    # map
    map: str = "doubling"
    alpha: Optional[float] = None
    gamma: Optional[float] = None
    # measure schedule mu_i
    schedule: str = "power"
    exponent: Optional[float] = 0.5
    offset: Optional[int] = None
    # targets
    construction: str = "lebesgue_ball"
    center: Optional[float] = GOLDEN_CENTER
    calibration_length: int = 10**7
    # embedded checks (None disables a check)
    late_window: Optional[int] = None
    sprindzuk_eps: Optional[float] = None
    sprindzuk_c_max: Optional[float] = None
    median_lo: Optional[float] = None
    median_hi: Optional[float] = None
    variance_max: Optional[float] = None
    growth_min: Optional[float] = None
    plateau_min: Optional[float] = None
    expected_min: Optional[float] = None
    # return-time sweep (thm3_returns)
    return_samples: int = 10_000
    return_radii: str = "8..14"  # exponents j of radii 2^-j
    ks_max: Optional[float] = None
    periodic_center: Optional[float] = None
    small_mass_min: Optional[float] = None
    # short returns (thm4_short)
    short_index: Optional[int] = None
    short_k: float = 5.0
    short_length: int = 10**7
    short_center: Optional[float] = None

    def __post_init__(self):
        validate(self)

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)

    @property
    def kind(self):
        """What the run computes: an S_n ensemble, a return-law sweep, or both."""
        if self.preset == "thm3_returns":
            return "returns"
        return "ensemble"

    def radii_exponents(self):
        return parse_range(self.return_radii)

    def digest(self):
        return hashlib.sha256(render(self).encode()).hexdigest()


def parse_range(text):
    """'8..14' -> [8, ..., 14]; '8,10,12' -> [8, 10, 12]."""
    text = text.strip()
    if ".." in text:
        a, b = text.split("..")
        return list(range(int(a), int(b) + 1))
    return [int(t) for t in text.split(",") if t.strip()]


def validate(c: ExperimentConfig):
    if c.preset not in PRESETS:
        raise ConfigurationError(f"unknown preset {c.preset!r}; expected one of {PRESETS}")
    if c.ensemble < 0:
        raise ConfigurationError("ensemble size must be >= 0")
    if c.length < 1:
        raise ConfigurationError("orbit length must be >= 1")
    if c.seed < 0 or c.seed >= 2**64:
        raise ConfigurationError("seed must lie in [0, 2^64)")
    if c.burn_in < 0:
        raise ConfigurationError("burn_in must be >= 0")
    if c.map not in ("lsv", "chmv", "doubling", "iid_control"):
        raise ConfigurationError(f"unknown map {c.map!r}")
    if c.map == "lsv" and not (c.alpha is not None and 0.0 < c.alpha < 1.0):
        raise ConfigurationError(f"lsv needs 0 < alpha < 1, got {c.alpha}")
    if c.map == "chmv" and not (c.gamma is not None and c.gamma > 1.0):
        raise ConfigurationError(f"chmv needs gamma > 1, got {c.gamma}")
    if c.schedule not in ("power", "log_over_i", "harmonic", "i_log_i"):
        raise ConfigurationError(f"unknown schedule {c.schedule!r}")
    if c.schedule == "power" and not (c.exponent is not None and 0.0 < c.exponent < 1.0):
        raise ConfigurationError("power schedules need 0 < exponent < 1")
    if c.construction not in ("calibrated_ball", "lebesgue_ball", "kim_interval", "chmv_interval"):
        raise ConfigurationError(f"unknown construction {c.construction!r}")
    if c.construction == "kim_interval" and c.map != "lsv":
        raise ConfigurationError("kim intervals belong to the lsv map")
    if c.construction == "chmv_interval" and c.map != "chmv":
        raise ConfigurationError("chmv intervals belong to the chmv map")
    if c.construction.endswith("ball") and c.center is None and c.map != "iid_control":
        raise ConfigurationError("ball targets need a center")
    if c.construction == "lebesgue_ball" and c.map == "lsv":
        raise ConfigurationError("lebesgue balls need a Lebesgue-invariant map; use calibrated_ball")
    if c.calibration_length < 1:
        raise ConfigurationError("calibration_length must be >= 1")
    if c.return_samples < 1:
        raise ConfigurationError("return_samples must be >= 1")
    try:
        ex = parse_range(c.return_radii)
    except ValueError:
        raise ConfigurationError(f"bad radius exponent list {c.return_radii!r}") from None
    if any(b <= a for a, b in zip(ex, ex[1:])) or not ex or ex[0] < 1:
        raise ConfigurationError("radius exponents must be positive and increasing")
    if c.short_index is not None and c.short_index < 2:
        raise ConfigurationError("short_index must be >= 2")


# --- text format ---------------------------------------------------------


def _fmt(v):
    if v is None:
        return "none"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def render(c: ExperimentConfig) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    for f in fields(ExperimentConfig):
        sec = _SECTIONS[f.name]
        if not cp.has_section(sec):
            cp.add_section(sec)
        cp.set(sec, f.name, _fmt(getattr(c, f.name)))
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def _coerce(name, text):
    f = {f.name: f for f in fields(ExperimentConfig)}.get(name)
    if f is None:
        raise ConfigurationError(f"unknown key {name!r}")
    text = text.strip()
    t = str(f.type)
    if text.lower() == "none":
        if "Optional" not in t:
            raise ConfigurationError(f"{name} cannot be none")
        return None
    try:
        if "int" in t:
            return int(float(text)) if "e" in text.lower() else int(text)
        if "float" in t:
            return float(text)
    except ValueError:
        raise ConfigurationError(f"bad value for {name}: {text!r}") from None
    return text


def parse(text: str, base: Optional[ExperimentConfig] = None) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigurationError(f"unreadable config: {e}") from None
    kw = {}
    for sec in cp.sections():
        for key, val in cp.items(sec):
            if _SECTIONS.get(key) != sec:
                raise ConfigurationError(f"key {key!r} does not belong in section [{sec}]")
            kw[key] = _coerce(key, val)
    preset = kw.get("preset", base.preset if base else "custom")
    start = base if base is not None else preset_config(preset)
    return apply_overrides(start, kw)


def apply_overrides(c: ExperimentConfig, kw) -> ExperimentConfig:
    kw = {k: (_coerce(k, v) if isinstance(v, str) else v) for k, v in kw.items()}
    return dataclasses.replace(c, **kw)


def parse_set(items):
    """['length=1e6', 'map.alpha=0.6'] -> {'length': '1e6', 'alpha': '0.6'}."""
    out = {}
    for it in items:
        if "=" not in it:
            raise ConfigurationError(f"--set expects key=value, got {it!r}")
        k, v = it.split("=", 1)
        k = k.strip().split(".")[-1]
        out[k] = v
    return out


# --- presets -------------------------------------------------------------


def preset_config(name) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigurationError(f"unknown preset {name!r}; expected one of {PRESETS}")
    base = ExperimentConfig(preset=name, output=f"runs/{name}")
    return base.replace(**_PRESET_FIELDS[name])


_PRESET_FIELDS = {
    "thm1": dict(map="doubling", schedule="power", exponent=0.5, construction="calibrated_ball",
                 center=GOLDEN_CENTER, ensemble=64, length=10**6, calibration_length=10**7,
                 median_lo=0.95, median_hi=1.05, variance_max=0.05, sprindzuk_eps=0.1,
                 sprindzuk_c_max=5.0),
    "thm2": dict(map="doubling", schedule="log_over_i", exponent=None, construction="lebesgue_ball",
                 center=GOLDEN_CENTER, ensemble=16, length=10**8, median_lo=0.6, median_hi=1.4,
                 growth_min=0.9),
    "thm3_returns": dict(map="doubling", ensemble=0, construction="lebesgue_ball", center=GOLDEN_CENTER,
                         return_samples=10_000, return_radii="8..14", ks_max=0.08,
                         periodic_center=0.0, small_mass_min=0.2),
    "thm4_short": dict(map="doubling", schedule="i_log_i", exponent=None, construction="lebesgue_ball",
                       center=GOLDEN_CENTER, ensemble=16, length=10**8, growth_min=0.9,
                       short_index=1000, short_k=5.0, short_length=10**7, short_center=GOLDEN_CENTER),
    "kim_counterexample": dict(map="lsv", alpha=0.6, schedule="harmonic", exponent=None,
                               construction="kim_interval", center=None, ensemble=64, length=10**7,
                               burn_in=10**4, late_window=10**5, plateau_min=0.9),
    "chmv_counterexample": dict(map="chmv", gamma=3.0, schedule="power", exponent=0.5,
                                construction="chmv_interval", center=None, ensemble=64, length=10**7,
                                late_window=10**6, plateau_min=0.9, expected_min=50.0),
    "prop1_expanding": dict(map="doubling", schedule="power", exponent=0.5, construction="lebesgue_ball",
                            center=0.0, ensemble=64, length=10**6, median_lo=0.9, median_hi=1.1),
    "iid_baseline": dict(map="iid_control", schedule="power", exponent=0.5, construction="lebesgue_ball",
                         center=0.5, ensemble=256, length=10**6, median_lo=0.98, median_hi=1.02),
    "custom": dict(),
}


def preset_descriptions():
    return {
        "thm1": "doubling map, calibrated balls of measure i^-1/2 at a generic center: SBC ratio, variance, error term",
        "thm2": "doubling map, balls of measure (log i)/i: ratio and unbounded growth",
        "thm3_returns": "doubling map return-time law over shrinking radii, with a periodic-center control",
        "thm4_short": "short-return masses at a generic center and SBC for measures 1/(i log i)",
        "kim_counterexample": "lsv map, intervals [0, n^-1/(1-alpha)): hits stop although E_n diverges",
        "chmv_counterexample": "odd circle map, arcs (-1, a_-n): no hits although E_n diverges",
        "prop1_expanding": "doubling map, balls centred at the fixed point 0: SBC for arbitrary intervals",
        "iid_baseline": "independent events with p_i = i^-1/2: classical lemma baseline",
        "custom": "any map/schedule/target combination given by --set or a config file",
    }
