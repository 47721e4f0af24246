"""Pure-Python probit and fusion kernels.

Reference implementation of the kernels compiled in ``_core.pyx``; the two
modules expose the same functions and must agree to rounding.
"""
from __future__ import annotations

import math

SQRT1_2 = math.sqrt(0.5)
LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

# Below this argument log Phi and the Mills ratio switch to the asymptotic series.
ASYMPTOTIC_CUTOFF = -20.0
_SERIES_TERMS = 12

_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425

IMPLEMENTATION = "python"


def ndtr(x: float) -> float:
    return 0.5 * math.erfc(-x * SQRT1_2)


def npdf(x: float) -> float:
    return INV_SQRT_2PI * math.exp(-0.5 * x * x)


def _tail_series(x: float) -> float:
    # Phi(x) ~ phi(x)/(-x) * sum_k (-1)^k (2k-1)!! / x^(2k), valid for x << 0
    inv2 = 1.0 / (x * x)
    term = 1.0
    total = 1.0
    for k in range(1, _SERIES_TERMS + 1):
        term *= -(2 * k - 1) * inv2
        total += term
    return total


def log_ndtr(x: float) -> float:
    if x > 0.0:
        return math.log1p(-0.5 * math.erfc(x * SQRT1_2))
    if x > ASYMPTOTIC_CUTOFF:
        return math.log(0.5 * math.erfc(-x * SQRT1_2))
    return -0.5 * x * x - math.log(-x) - LOG_SQRT_2PI + math.log(_tail_series(x))


def mills(x: float) -> float:
    """phi(x) / Phi(x)."""
    if x > ASYMPTOTIC_CUTOFF:
        return npdf(x) / ndtr(x)
    return -x / _tail_series(x)


def _mills_slope(x: float, r: float) -> float:
    """-(d/dx) mills(x) = r * (x + r), kept accurate where x + r cancels."""
    if x > ASYMPTOTIC_CUTOFF:
        return r * (x + r)
    s = _tail_series(x)
    return r * x * (s - 1.0) / s


def _ndtri_lower(p: float) -> float:
    # Rational approximation (rel. error ~1e-9) for p <= 0.5, then one Newton step.
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        x = ((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5])
             / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0))
    else:
        q = p - 0.5
        r = q * q
        x = ((((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q
             / (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0))
    return x - (ndtr(x) - p) / npdf(x)


def ndtri(p: float) -> float:
    if p > 0.5:
        return -_ndtri_lower(1.0 - p)
    return _ndtri_lower(p)


def objective(s: float, s_init: float, scores, prefs, lam: float) -> float:
    total = 0.0
    for sj, y in zip(scores, prefs):
        d = s - sj
        total -= y * log_ndtr(d) + (1.0 - y) * log_ndtr(-d)
    diff = s - s_init
    return total + lam * diff * diff


def gradient(s: float, s_init: float, scores, prefs, lam: float) -> float:
    total = 0.0
    for sj, y in zip(scores, prefs):
        d = s - sj
        total += (1.0 - y) * mills(-d) - y * mills(d)
    return total + 2.0 * lam * (s - s_init)


def _grad_hess(s, s_init, scores, prefs, lam):
    g = 0.0
    h = 0.0
    for sj, y in zip(scores, prefs):
        d = s - sj
        rp = mills(d)
        rm = mills(-d)
        g += (1.0 - y) * rm - y * rp
        h += y * _mills_slope(d, rp) + (1.0 - y) * _mills_slope(-d, rm)
    return g + 2.0 * lam * (s - s_init), h + 2.0 * lam


def closed_form(s_init: float, scores, prefs, lam: float) -> float:
    total = 0.0
    n = 0
    for sj, y in zip(scores, prefs):
        total += sj + ndtri(y)
        n += 1
    return (total + lam * s_init) / (n + lam)


def solve_exact(s_init: float, scores, prefs, lam: float, lo: float, hi: float,
                tol: float = 1e-10, maxiter: int = 200):
    """Root of the objective's derivative by safeguarded Newton/bisection.

    ``[lo, hi]`` is the initial bracket; it is widened geometrically while the
    derivative has no sign change. Returns ``(s, iterations)``; ``iterations``
    is -1 when the iteration budget ran out.
    """
    scores = list(scores)
    prefs = list(prefs)
    a, b = lo, hi
    ga = gradient(a, s_init, scores, prefs, lam)
    gb = gradient(b, s_init, scores, prefs, lam)
    for _ in range(64):
        if ga <= 0.0:
            break
        width = b - a
        b, gb = a, ga
        a -= width
        ga = gradient(a, s_init, scores, prefs, lam)
    for _ in range(64):
        if gb >= 0.0:
            break
        width = b - a
        a, ga = b, gb
        b += width
        gb = gradient(b, s_init, scores, prefs, lam)
    if ga == 0.0:
        return a, 0
    if gb == 0.0:
        return b, 0

    s = closed_form(s_init, scores, prefs, lam) if scores else s_init
    if not a < s < b:
        s = 0.5 * (a + b)
    for it in range(1, maxiter + 1):
        g, h = _grad_hess(s, s_init, scores, prefs, lam)
        if abs(g) <= tol:
            return s, it
        if g > 0.0:
            b = s
        else:
            a = s
        step = s - g / h if h > 0.0 else a - 1.0
        if not a < step < b:
            step = 0.5 * (a + b)
        if step == s:
            return s, it
        s = step
    return s, -1
