"""Compiled inner loops for orbit generation and branch inversion.

Kernels never raise; they report failures through status codes that the
Python wrappers in :mod:`bclab.maps` turn into exceptions.
"""

import numpy as np
from numba import njit

OK = 0
NO_CONVERGENCE = 1
ESCAPED = 2

_TWO_M53 = 2.0**-53
_TWO_M64 = 2.0**-64


@njit(cache=True, nogil=True)
def lsv_scalar(x, alpha):
    if x < 0.5:
        return x * (1.0 + 2.0**alpha * x**alpha)
    return 2.0 * x - 1.0


@njit(cache=True, nogil=True)
def lsv_left_inverse(y, alpha, tol, max_iter):
    """Solve x(1 + 2^a x^a) = y for x in [0, 1/2]; returns (x, residual, iterations)."""
    lo = 0.0
    hi = 0.5
    k = 2.0**alpha
    x = 0.5 * y
    g = 0.0
    for it in range(max_iter):
        g = x * (1.0 + k * x**alpha) - y
        if abs(g) <= tol:
            return x, g, it
        if g > 0.0:
            hi = x
        else:
            lo = x
        dg = 1.0 + (1.0 + alpha) * k * x**alpha
        xn = x - g / dg
        if not (lo < xn < hi):
            xn = 0.5 * (lo + hi)
        x = xn
    g = x * (1.0 + k * x**alpha) - y
    if abs(g) <= tol:
        return x, g, max_iter
    return x, g, -1


@njit(cache=True, nogil=True)
def _pow_m1(s, gamma):
    """s^(gamma - 1), by repeated multiplication when gamma is a small integer."""
    if gamma == 2.0:
        return s
    if gamma == 3.0:
        return s * s
    if gamma == 4.0:
        return s * s * s
    return s ** (gamma - 1.0)


@njit(cache=True, nogil=True)
def chmv_right(x, gamma, tol, max_iter):
    """Solve T + (1 - T)^g / (2g) = x for T in [0, 1]; returns (T, residual, iterations).

    The branch function is increasing with slope in [1/2, 1], so the bracket
    [0, 1] stays valid and Newton steps leaving it fall back to bisection.
    """
    c = 0.5 / gamma
    lo = 0.0
    hi = 1.0
    s = 1.0 - x
    t = x - c * _pow_m1(s, gamma) * s
    if not (lo <= t <= hi):
        t = 0.5
    g = 0.0
    for it in range(max_iter):
        s = 1.0 - t
        p = _pow_m1(s, gamma)
        g = t + c * p * s - x
        if abs(g) <= tol:
            return t, g, it
        if g > 0.0:
            hi = t
        else:
            lo = t
        tn = t - g / (1.0 - 0.5 * p)
        if not (lo < tn < hi):
            tn = 0.5 * (lo + hi)
        t = tn
    s = 1.0 - t
    g = t + c * _pow_m1(s, gamma) * s - x
    if abs(g) <= tol:
        return t, g, max_iter
    return t, g, -1


@njit(cache=True, nogil=True)
def chmv_scalar(x, gamma, tol, max_iter):
    """Evaluate the odd circle map; returns (T(x), residual, converged)."""
    sign = 1.0
    if x < 0.0:
        sign = -1.0
        x = -x
    c = 0.5 / gamma
    if x <= c:
        return sign * ((2.0 * gamma * x) ** (1.0 / gamma) - 1.0), 0.0, True
    t, res, it = chmv_right(x, gamma, tol, max_iter)
    return sign * t, res, it >= 0


@njit(cache=True, nogil=True)
def lsv_fill(out, x, alpha, tol):
    """out[k] = T^k x; returns (T^len(out) x, status, failing index)."""
    for k in range(out.shape[0]):
        if x < -tol or x > 1.0 + tol:
            return x, ESCAPED, k
        out[k] = x
        x = lsv_scalar(x, alpha)
    return x, OK, -1


@njit(cache=True, nogil=True)
def lsv_advance(x, n, alpha, tol):
    for k in range(n):
        if x < -tol or x > 1.0 + tol:
            return x, ESCAPED, k
        x = lsv_scalar(x, alpha)
    return x, OK, -1


@njit(cache=True, nogil=True)
def chmv_fill(out, x, gamma, tol, max_iter):
    for k in range(out.shape[0]):
        if x < -1.0 - tol or x > 1.0 + tol:
            return x, ESCAPED, k
        out[k] = x
        x, res, ok = chmv_scalar(x, gamma, tol, max_iter)
        if not ok:
            return x, NO_CONVERGENCE, k
    return x, OK, -1


@njit(cache=True, nogil=True)
def chmv_advance(x, n, gamma, tol, max_iter):
    for k in range(n):
        if x < -1.0 - tol or x > 1.0 + tol:
            return x, ESCAPED, k
        x, res, ok = chmv_scalar(x, gamma, tol, max_iter)
        if not ok:
            return x, NO_CONVERGENCE, k
    return x, OK, -1


@njit(cache=True, nogil=True)
def chmv_eval_array(xs, gamma, tol, max_iter, out, residuals):
    worst = -1
    for k in range(xs.shape[0]):
        t, res, ok = chmv_scalar(xs[k], gamma, tol, max_iter)
        out[k] = t
        residuals[k] = res
        if not ok and worst < 0:
            worst = k
    return worst


@njit(cache=True, nogil=True)
def lsv_eval_array(xs, alpha, out):
    for k in range(xs.shape[0]):
        out[k] = lsv_scalar(xs[k], alpha)


@njit(cache=True, nogil=True)
def doubling_fill(words, out):
    """Read 64-bit windows of a bit stream: out[i] = 0.b_i b_(i+1) ... b_(i+63) in binary64.

    The stream is ``words`` read most-significant bit first, so consecutive
    windows are consecutive doubling-map iterates of the point whose binary
    expansion is the stream.  Windows are rounded to nearest (so small values
    keep full precision), except that a window never rounds up to 1.
    Needs ``len(words) >= len(out) // 64 + 1``.
    """
    for i in range(out.shape[0]):
        j = i >> 6
        s = np.uint64(i & 63)
        if s == 0:
            v = words[j]
        else:
            v = (words[j] << s) | (words[j + 1] >> (np.uint64(64) - s))
        hi = np.float64(v >> np.uint64(11)) * _TWO_M53
        x = hi + np.float64(v & np.uint64(2047)) * _TWO_M64
        out[i] = x if x < 1.0 else hi


@njit(cache=True, nogil=True)
def chmv_backward(gamma, n, a, b):
    """a[i] = T_-^{-i}(-1/(2g)); b[i-1] = a[i-1] - a[i] (exact by Sterbenz)."""
    c = 0.5 / gamma
    a[0] = -c
    for i in range(n):
        a[i + 1] = a[i] - c * (1.0 + a[i]) ** gamma
        b[i] = a[i] - a[i + 1]
