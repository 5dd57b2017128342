"""Interval maps, orbit generation and the backward sequences of the odd circle map.

Three deterministic systems are provided plus an i.i.d. control process:

``lsv``
    The intermittent map ``x(1 + 2^a x^a)`` on ``[0, 1/2)``, ``2x - 1`` on
    ``[1/2, 1]``, with an indifferent fixed point at 0 and an acip whose
    density blows up like ``x^-a``.
``chmv``
    The Lebesgue-preserving odd circle map on ``[-1, 1]`` (endpoints
    identified) defined implicitly by ``x = (1 + T)^g / (2g)`` on
    ``[0, 1/(2g)]`` and ``x = T + (1 - T)^g / (2g)`` on ``[1/(2g), 1]``.
``doubling``
    ``2x mod 1``, the uniformly expanding baseline.
``iid_control``
    Independent hit indicators with prescribed success probabilities.

Long doubling-map orbits cannot be iterated in floating point (every float
reaches 0 after at most ~1075 doublings), so :func:`orbit_chunks` represents
a doubling orbit by the binary expansion of its initial point, with the digits
beyond double precision drawn from the orbit's random stream.  Each emitted
value is an exact 53-bit truncation of the true iterate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional

import numpy as np

from . import _kernels as K
from .errors import ConfigurationError, NumericError
from .rng import Purpose, bit_generator, generator

KINDS = ("lsv", "chmv", "doubling", "iid_control")
DEFAULT_TOL = 1e-13
DEFAULT_MAX_ITER = 200
DEFAULT_CHUNK = 1 << 20


@dataclass(frozen=True)
class Branch:
    """A monotone piece of a map: ``forward`` maps ``domain`` onto ``image``."""

    domain: tuple[float, float]
    image: tuple[float, float]
    forward: Callable[[float], float]
    inverse: Callable[[float], float]
    increasing: bool = True


@dataclass(frozen=True)
class MapSystem:
    kind: str
    alpha: Optional[float] = None
    gamma: Optional[float] = None
    probs: object = None  # success-probability schedule for iid_control
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown map kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "lsv":
            _check_alpha(self.alpha)
        if self.kind == "chmv":
            _check_gamma(self.gamma)
        if self.kind == "iid_control" and self.probs is None:
            raise ConfigurationError("iid_control needs a success-probability schedule")
        if not (self.tol > 0 and math.isfinite(self.tol)):
            raise ConfigurationError(f"inversion tolerance must be positive, got {self.tol}")
        if self.max_iter < 1:
            raise ConfigurationError("max_iter must be >= 1")

    @classmethod
    def lsv(cls, alpha, **kw):
        return cls("lsv", alpha=float(alpha), **kw)

    @classmethod
    def chmv(cls, gamma, **kw):
        return cls("chmv", gamma=float(gamma), **kw)

    @classmethod
    def doubling(cls, **kw):
        return cls("doubling", **kw)

    @classmethod
    def iid_control(cls, probs, **kw):
        return cls("iid_control", probs=probs, **kw)

    @property
    def domain(self):
        return (-1.0, 1.0) if self.kind == "chmv" else (0.0, 1.0)

    @property
    def period(self):
        lo, hi = self.domain
        return hi - lo

    @property
    def reference_measure(self):
        """``'lebesgue'`` when normalised Lebesgue measure is invariant, else ``'acip'``."""
        return "acip" if self.kind == "lsv" else "lebesgue"

    @property
    def is_orbit_map(self):
        return self.kind != "iid_control"

    def __call__(self, x):
        if self.kind == "lsv":
            return eval_lsv(self.alpha, x)
        if self.kind == "chmv":
            return eval_chmv(self.gamma, x, self.tol, self.max_iter)
        if self.kind == "doubling":
            return eval_doubling(x)
        raise ConfigurationError("iid_control has no phase space to evaluate")

    def evaluate(self, xs):
        """Vectorised evaluation over an array of points."""
        xs = np.ascontiguousarray(xs, dtype=np.float64)
        out = np.empty_like(xs)
        if self.kind == "lsv":
            K.lsv_eval_array(xs, self.alpha, out)
        elif self.kind == "chmv":
            res = np.empty_like(xs)
            bad = K.chmv_eval_array(xs, self.gamma, self.tol, self.max_iter, out, res)
            if bad >= 0:
                raise NumericError(
                    f"branch inversion did not converge at x={xs[bad]!r}", residual=float(res[bad])
                )
        elif self.kind == "doubling":
            out = np.mod(2.0 * xs, 1.0)
        else:
            raise ConfigurationError("iid_control has no phase space to evaluate")
        return out

    def distance(self, x, y):
        """Circle distance on the domain (endpoints identified)."""
        d = np.abs(np.asarray(x, dtype=np.float64) - y)
        return np.minimum(d, self.period - d)

    def branches(self) -> list[Branch]:
        if self.kind == "doubling":
            return [
                Branch((0.0, 0.5), (0.0, 1.0), lambda x: 2 * x, lambda y: y / 2),
                Branch((0.5, 1.0), (0.0, 1.0), lambda x: 2 * x - 1, lambda y: (y + 1) / 2),
            ]
        if self.kind == "lsv":
            a = self.alpha

            def left_inv(y):
                x, res, it = K.lsv_left_inverse(float(y), a, self.tol, self.max_iter)
                if it < 0:
                    raise NumericError(f"lsv left-branch inversion failed at y={y!r}", residual=res)
                return x

            return [
                Branch((0.0, 0.5), (0.0, 1.0), lambda x: eval_lsv(a, x), left_inv),
                Branch((0.5, 1.0), (0.0, 1.0), lambda x: 2 * x - 1, lambda y: (y + 1) / 2),
            ]
        if self.kind == "chmv":
            g = self.gamma
            c = 0.5 / g
            fwd = self.__call__
            return [
                Branch((-1.0, -c), (-1.0, 0.0), fwd, lambda y: y - c * (1 + y) ** g),
                Branch((-c, 0.0), (0.0, 1.0), fwd, lambda y: -c * (1 - y) ** g),
                Branch((0.0, c), (-1.0, 0.0), fwd, lambda y: c * (1 + y) ** g),
                Branch((c, 1.0), (0.0, 1.0), fwd, lambda y: y + c * (1 - y) ** g),
            ]
        raise ConfigurationError("iid_control has no branch structure")

    def preimage_length(self, lo, hi):
        """Total Lebesgue length of the branch-wise preimages of ``[lo, hi]``."""
        total = 0.0
        for br in self.branches():
            a = max(lo, br.image[0])
            b = min(hi, br.image[1])
            if b > a:
                total += abs(br.inverse(b) - br.inverse(a))
        return total

    def sample_uniform(self, rng, size=None):
        lo, hi = self.domain
        return lo + (hi - lo) * rng.random(size)

    def describe(self):
        d = {"kind": self.kind, "tol": self.tol}
        if self.alpha is not None:
            d["alpha"] = self.alpha
        if self.gamma is not None:
            d["gamma"] = self.gamma
        return d


def _check_alpha(alpha):
    if alpha is None or not (0.0 < alpha < 1.0):
        raise ConfigurationError(f"lsv needs 0 < alpha < 1, got {alpha}")


def _check_gamma(gamma):
    if gamma is None or not (gamma > 1.0 and math.isfinite(gamma)):
        raise ConfigurationError(f"chmv needs gamma > 1, got {gamma}")


def eval_lsv(alpha, x):
    _check_alpha(alpha)
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x={x} outside [0, 1]")
    return float(K.lsv_scalar(float(x), float(alpha)))


def eval_chmv(gamma, x, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    _check_gamma(gamma)
    if not -1.0 <= x <= 1.0:
        raise ValueError(f"x={x} outside [-1, 1]")
    t, res, ok = K.chmv_scalar(float(x), float(gamma), float(tol), int(max_iter))
    if not ok:
        raise NumericError(f"branch inversion did not converge at x={x!r}", residual=float(res))
    return float(t)


def chmv_branch_residual(gamma, x, t):
    """|branch equation evaluated at T - x|, using the branch that ``x`` lies on."""
    c = 0.5 / gamma
    ax, at = abs(x), (t if x >= 0 else -t)
    if ax <= c:
        return abs(c * (1.0 + at) ** gamma - ax)
    return abs(at + c * (1.0 - at) ** gamma - ax)


def eval_doubling(x):
    if not 0.0 <= x < 1.0:
        raise ValueError(f"x={x} outside [0, 1)")
    return (2.0 * x) % 1.0


@dataclass
class Orbit:
    """One orbit request.

    ``x0=None`` draws the initial point from the reference measure's
    Lebesgue proxy using the orbit's own stream ``(seed, index)``.
    ``burn_in`` iterations are discarded before index 0.  ``purpose`` selects
    the random stream, so e.g. a calibration orbit never shares draws with
    ensemble orbit number ``index``.
    """

    x0: Optional[float] = None
    length: int = 0
    seed: int = 0
    index: int = 0
    burn_in: int = 0
    checkpoint_ratio: float = 1.5
    purpose: int = Purpose.ORBIT

    def __post_init__(self):
        if self.length < 0 or self.burn_in < 0:
            raise ConfigurationError("orbit length and burn-in must be >= 0")
        if self.checkpoint_ratio <= 1.0:
            raise ConfigurationError("checkpoint ratio must exceed 1")


def iterate(system: MapSystem, orbit: Orbit, visitor=None):
    """Apply the map ``orbit.length`` times from ``orbit.x0``.

    ``visitor(k, x)`` is called with ``x = T^k x0`` for ``k = 0 .. length``.
    This is the scalar reference path; ensembles use :func:`orbit_chunks`.
    """
    if orbit.x0 is None:
        raise ConfigurationError("iterate needs an explicit initial point")
    lo, hi = system.domain
    x = float(orbit.x0)
    for k in range(orbit.length):
        if visitor is not None:
            visitor(k, x)
        x = system(x)
        if x < lo - system.tol or x > hi + system.tol:
            raise NumericError(f"orbit left the domain at step {k + 1}: x={x!r}")
    if visitor is not None:
        visitor(orbit.length, x)
    return x


def _raise_status(status, where, x):
    if status == K.NO_CONVERGENCE:
        raise NumericError(f"branch inversion did not converge at step {where} (x={x!r})")
    if status == K.ESCAPED:
        raise NumericError(f"orbit left the domain at step {where} (x={x!r})")


def initial_point(system: MapSystem, orbit: Orbit):
    """The initial point an ensemble orbit actually starts from (before burn-in)."""
    if orbit.x0 is not None:
        return float(orbit.x0)
    if system.kind == "doubling":
        out = np.empty(1)
        K.doubling_fill(bit_generator(orbit.seed, orbit.index, orbit.purpose).random_raw(2), out)
        return float(out[0])
    return float(system.sample_uniform(generator(orbit.seed, orbit.index, orbit.purpose)))


def orbit_chunks(system: MapSystem, orbit: Orbit, chunk=DEFAULT_CHUNK) -> Iterator[tuple[int, np.ndarray]]:
    """Yield ``(start, values)`` blocks covering ``T^k x`` for ``k = 0 .. orbit.length``.

    Blocks are produced lazily so arbitrarily long orbits run in bounded memory.
    """
    if not system.is_orbit_map:
        raise ConfigurationError("iid_control has no orbit")
    chunk = max(64, int(chunk) // 64 * 64)
    total = orbit.length + 1
    if system.kind == "doubling":
        yield from _doubling_chunks(orbit, total, chunk)
        return
    x = initial_point(system, orbit)
    if system.kind == "lsv":
        x, st, k = K.lsv_advance(x, orbit.burn_in, system.alpha, system.tol)
    else:
        x, st, k = K.chmv_advance(x, orbit.burn_in, system.gamma, system.tol, system.max_iter)
    _raise_status(st, k - orbit.burn_in, x)
    start = 0
    while start < total:
        out = np.empty(min(chunk, total - start))
        if system.kind == "lsv":
            x, st, k = K.lsv_fill(out, x, system.alpha, system.tol)
        else:
            x, st, k = K.chmv_fill(out, x, system.gamma, system.tol, system.max_iter)
        _raise_status(st, start + k, x)
        yield start, out
        start += out.shape[0]


def _doubling_chunks(orbit, total, chunk):
    bg = bit_generator(orbit.seed, orbit.index, orbit.purpose)
    if orbit.x0 is not None:
        if not 0.0 <= orbit.x0 < 1.0:
            raise ValueError(f"x0={orbit.x0} outside [0, 1)")
        first = np.uint64(int(math.ldexp(float(orbit.x0), 64)))
        bg.random_raw(1)  # keep later words aligned with the x0=None stream
    else:
        first = bg.random_raw(1)[0]
    # Skipping the burn-in is just dropping leading digits.
    skip_words, skip_bits = divmod(orbit.burn_in, 64)
    if skip_words:
        bg.random_raw(skip_words - 1)
        first = bg.random_raw(1)[0]
    carry = np.array([first], dtype=np.uint64)
    pending = skip_bits
    start = 0
    while start < total:
        n = min(chunk, total - start)
        need = (pending + n + 63) // 64 + 1
        words = np.concatenate([carry, bg.random_raw(need - carry.shape[0])])
        buf = np.empty(pending + n)
        K.doubling_fill(words, buf)
        out = buf[pending:]
        used = (pending + n) // 64
        carry = words[used:]
        pending = (pending + n) % 64
        yield start, out
        start += n


def sample_orbit(system: MapSystem, orbit: Orbit, chunk=DEFAULT_CHUNK):
    """The whole orbit ``T^k x``, ``k = 0 .. length``, as one array."""
    out = np.empty(orbit.length + 1)
    for start, block in orbit_chunks(system, orbit, chunk):
        out[start : start + block.shape[0]] = block
    return out


@dataclass
class BackwardSequences:
    """Backward orbit of ``-1/(2g)`` under the left half of the odd circle map.

    ``a[i]`` is a_{-i} for ``i = 0 .. n``; ``b[i - 1]`` is b_i for ``i = 1 .. n``.
    """

    gamma: float
    a: np.ndarray
    b: np.ndarray
    tau: float = field(init=False)

    def __post_init__(self):
        self.tau = 1.0 / (self.gamma - 1.0)

    @property
    def n(self):
        return self.b.shape[0]

    def b_at(self, i):
        if not 1 <= i <= self.n:
            raise IndexError(f"b_{i} outside 1..{self.n}")
        return float(self.b[i - 1])

    def lengths(self):
        """Lebesgue lengths ``1 + a_{-i}`` of the arcs ``(-1, a_{-i})``."""
        return 1.0 + self.a


def chmv_backward_sequence(gamma, n) -> BackwardSequences:
    """a_{-(i+1)} = a_{-i} - (1 + a_{-i})^g / (2g), b_{i+1} = a_{-i} - a_{-(i+1)}.

    On ``(-1, -1/(2g))`` the odd extension satisfies ``x = T - (1 + T)^g/(2g)``,
    which is the explicit inverse used here; the left branch on ``(0, 1/(2g))``
    gives ``b_{i+1} = (1 + a_{-i})^g / (2g)``.  Taking ``b`` as the exact
    floating-point difference makes ``a_{-(i+1)} + b_{i+1} == a_{-i}`` hold
    bit-for-bit.
    """
    _check_gamma(gamma)
    n = int(n)
    if n < 1:
        raise ConfigurationError("backward sequence needs n >= 1")
    a = np.empty(n + 1)
    b = np.empty(n)
    K.chmv_backward(float(gamma), n, a, b)
    return BackwardSequences(float(gamma), a, b)


@dataclass
class AsymptoticsTable:
    n: np.ndarray
    ratio_a: np.ndarray  # (1 + a_{-n}) / ((2g tau)^tau n^-tau)
    ratio_b: np.ndarray  # b_n / ((2g tau)^(g tau) (n - 1)^(-g tau) / (2g))
    leading_constant: float


def chmv_asymptotics_report(seq: BackwardSequences, ns=None) -> AsymptoticsTable:
    if seq.n < 10:
        raise ConfigurationError("asymptotics need a sequence of length >= 10")
    g, tau = seq.gamma, seq.tau
    lead = (2 * g * tau) ** tau
    ns = np.arange(2, seq.n + 1) if ns is None else np.asarray(ns, dtype=np.int64)
    nf = ns.astype(np.float64)
    ra = (1.0 + seq.a[ns]) / (lead * nf**-tau)
    rb = seq.b[ns - 1] / ((2 * g * tau) ** (g * tau) * (nf - 1.0) ** (-g * tau) / (2 * g))
    return AsymptoticsTable(ns, ra, rb, lead)


def iid_control_step(p, rng):
    """One Bernoulli(p) hit indicator."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability {p} outside [0, 1]")
    return int(rng.random() < p)
