# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled probit and fusion kernels; mirrors ``_core_py`` function by function."""

from libc.math cimport erfc, exp, fabs, log, log1p, sqrt

import numpy as np

IMPLEMENTATION = "cython"

cdef double SQRT1_2 = sqrt(0.5)
cdef double LOG_SQRT_2PI = 0.5 * log(2.0 * 3.141592653589793)
cdef double INV_SQRT_2PI = 1.0 / sqrt(2.0 * 3.141592653589793)
cdef double ASYMPTOTIC_CUTOFF = -20.0
cdef int SERIES_TERMS = 12
cdef double P_LOW = 0.02425

cdef double[6] A = [-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
                    1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00]
cdef double[5] B = [-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
                    6.680131188771972e01, -1.328068155288572e01]
cdef double[6] C = [-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
                    -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00]
cdef double[4] D = [7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
                    3.754408661907416e00]


cdef inline double _ndtr(double x) nogil:
    return 0.5 * erfc(-x * SQRT1_2)


cdef inline double _npdf(double x) nogil:
    return INV_SQRT_2PI * exp(-0.5 * x * x)


cdef inline double _tail_series(double x) nogil:
    cdef double inv2 = 1.0 / (x * x)
    cdef double term = 1.0
    cdef double total = 1.0
    cdef int k
    for k in range(1, SERIES_TERMS + 1):
        term *= -(2 * k - 1) * inv2
        total += term
    return total


cdef inline double _log_ndtr(double x) nogil:
    if x > 0.0:
        return log1p(-0.5 * erfc(x * SQRT1_2))
    if x > ASYMPTOTIC_CUTOFF:
        return log(0.5 * erfc(-x * SQRT1_2))
    return -0.5 * x * x - log(-x) - LOG_SQRT_2PI + log(_tail_series(x))


cdef inline double _mills(double x) nogil:
    if x > ASYMPTOTIC_CUTOFF:
        return _npdf(x) / _ndtr(x)
    return -x / _tail_series(x)


cdef inline double _mills_slope(double x, double r) nogil:
    cdef double s
    if x > ASYMPTOTIC_CUTOFF:
        return r * (x + r)
    s = _tail_series(x)
    return r * x * (s - 1.0) / s


cdef double _ndtri_lower(double p) nogil:
    cdef double q, r, x
    if p < P_LOW:
        q = sqrt(-2.0 * log(p))
        x = ((((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
             / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0))
    else:
        q = p - 0.5
        r = q * q
        x = ((((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
             / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0))
    return x - (_ndtr(x) - p) / _npdf(x)


cdef inline double _ndtri(double p) nogil:
    if p > 0.5:
        return -_ndtri_lower(1.0 - p)
    return _ndtri_lower(p)


cdef double _objective(double s, double s_init, const double[::1] sc, const double[::1] pr,
                       double lam) nogil:
    cdef Py_ssize_t j
    cdef double d, y, total = 0.0
    for j in range(sc.shape[0]):
        d = s - sc[j]
        y = pr[j]
        total -= y * _log_ndtr(d) + (1.0 - y) * _log_ndtr(-d)
    d = s - s_init
    return total + lam * d * d


cdef double _gradient(double s, double s_init, const double[::1] sc, const double[::1] pr,
                      double lam) nogil:
    cdef Py_ssize_t j
    cdef double d, y, total = 0.0
    for j in range(sc.shape[0]):
        d = s - sc[j]
        y = pr[j]
        total += (1.0 - y) * _mills(-d) - y * _mills(d)
    return total + 2.0 * lam * (s - s_init)


cdef void _grad_hess(double s, double s_init, const double[::1] sc, const double[::1] pr,
                     double lam, double* g_out, double* h_out) nogil:
    cdef Py_ssize_t j
    cdef double d, y, rp, rm, g = 0.0, h = 0.0
    for j in range(sc.shape[0]):
        d = s - sc[j]
        y = pr[j]
        rp = _mills(d)
        rm = _mills(-d)
        g += (1.0 - y) * rm - y * rp
        h += y * _mills_slope(d, rp) + (1.0 - y) * _mills_slope(-d, rm)
    g_out[0] = g + 2.0 * lam * (s - s_init)
    h_out[0] = h + 2.0 * lam


cdef double _closed_form(double s_init, const double[::1] sc, const double[::1] pr,
                         double lam) nogil:
    cdef Py_ssize_t j, n = sc.shape[0]
    cdef double total = 0.0
    for j in range(n):
        total += sc[j] + _ndtri(pr[j])
    return (total + lam * s_init) / (n + lam)


cdef inline const double[::1] _as_array(obj):
    return np.ascontiguousarray(obj, dtype=np.float64)


def ndtr(double x):
    return _ndtr(x)


def npdf(double x):
    return _npdf(x)


def log_ndtr(double x):
    return _log_ndtr(x)


def mills(double x):
    return _mills(x)


def ndtri(double p):
    return _ndtri(p)


def objective(double s, double s_init, scores, prefs, double lam):
    return _objective(s, s_init, _as_array(scores), _as_array(prefs), lam)


def gradient(double s, double s_init, scores, prefs, double lam):
    return _gradient(s, s_init, _as_array(scores), _as_array(prefs), lam)


def closed_form(double s_init, scores, prefs, double lam):
    return _closed_form(s_init, _as_array(scores), _as_array(prefs), lam)


def solve_exact(double s_init, scores, prefs, double lam, double lo, double hi,
                double tol=1e-10, int maxiter=200):
    cdef const double[::1] sc = _as_array(scores)
    cdef const double[::1] pr = _as_array(prefs)
    cdef double a = lo, b = hi, width, s, g, h, step
    cdef double ga = _gradient(a, s_init, sc, pr, lam)
    cdef double gb = _gradient(b, s_init, sc, pr, lam)
    cdef int k, it
    for k in range(64):
        if ga <= 0.0:
            break
        width = b - a
        b = a
        gb = ga
        a -= width
        ga = _gradient(a, s_init, sc, pr, lam)
    for k in range(64):
        if gb >= 0.0:
            break
        width = b - a
        a = b
        ga = gb
        b += width
        gb = _gradient(b, s_init, sc, pr, lam)
    if ga == 0.0:
        return a, 0
    if gb == 0.0:
        return b, 0

    s = _closed_form(s_init, sc, pr, lam) if sc.shape[0] > 0 else s_init
    if not (a < s < b):
        s = 0.5 * (a + b)
    for it in range(1, maxiter + 1):
        _grad_hess(s, s_init, sc, pr, lam, &g, &h)
        if fabs(g) <= tol:
            return s, it
        if g > 0.0:
            b = s
        else:
            a = s
        step = s - g / h if h > 0.0 else a - 1.0
        if not (a < step < b):
            step = 0.5 * (a + b)
        if step == s:
            return s, it
        s = step
    return s, -1
