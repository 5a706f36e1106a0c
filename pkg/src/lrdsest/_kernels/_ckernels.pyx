# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled scale solver and IRLS loop.

Call-compatible with ``_pykernels``.  All loops over observations run
without the GIL so replicate-level threads scale.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, pow
from libc.stdlib cimport malloc, free

cnp.import_array()

DEF MAX_SCALE_ITER = 200
DEF MAX_HALVINGS = 30

cdef enum:
    OK = 0
    NO_SOLUTION = 1
    ALL_ZERO = 2

cdef enum:
    CONVERGED = 0
    MAX_ITER = 1
    STALLED = 2
    EXACT_FIT = 3
    SINGULAR = 4


cdef inline void _g_and_d(const double* r, Py_ssize_t n, double s, double c,
                          double* g_out, double* d_out) noexcept nogil:
    cdef double inv = 1.0 / (s * c)
    cdef double g = 0.0, D = 0.0, v, u, om
    cdef Py_ssize_t t
    for t in range(n):
        u = r[t] * inv
        v = u * u
        if v < 1.0:
            om = 1.0 - v
            g += v * (3.0 - v * (3.0 - v))
            D += v * om * om
        else:
            g += 1.0
    g_out[0] = g / n
    d_out[0] = 6.0 * D / n


cdef int _scale(const double* r, Py_ssize_t n, double c, double K, double s0,
                double* s_out, double* g_out, int* it_out) noexcept nogil:
    cdef Py_ssize_t t, n_nz = 0
    cdef double a, amax = 0.0, amin = 1e308
    for t in range(n):
        a = fabs(r[t])
        if a > 0.0:
            n_nz += 1
            if a > amax:
                amax = a
            if a < amin:
                amin = a
    s_out[0] = 0.0
    it_out[0] = 0
    if n_nz == 0:
        g_out[0] = 0.0
        return ALL_ZERO
    if n_nz < K * n:
        g_out[0] = <double>n_nz / n
        return NO_SOLUTION
    cdef double u_k = c * sqrt(1.0 - pow(1.0 - K, 1.0 / 3.0))
    cdef double lo = amin / c, hi = amax / u_k
    cdef double s = s0 if (lo < s0 and s0 < hi) else sqrt(lo) * sqrt(hi)
    cdef double g = 0.0, D = 0.0, f, s_new
    cdef int it
    for it in range(1, MAX_SCALE_ITER + 1):
        _g_and_d(r, n, s, c, &g, &D)
        f = g - K
        it_out[0] = it
        g_out[0] = g
        if f == 0.0:
            if D == 0.0:
                s_out[0] = amin / c
            else:
                s_out[0] = s
            return OK
        if f > 0.0:
            lo = s
        else:
            hi = s
        if D > 0.0:
            s_new = s + f * s / D
        else:
            s_new = -1.0
        if not (lo < s_new and s_new < hi):
            if hi > 4.0 * lo:
                s_new = sqrt(lo) * sqrt(hi)
            else:
                s_new = 0.5 * (lo + hi)
        if fabs(s_new - s) <= 1e-14 * s or hi - lo <= 1e-15 * hi:
            s = s_new
            break
        s = s_new
    s_out[0] = s
    return OK


def scale_solve(r, double c, double K, double s0):
    """Largest s with mean(rho(r/s)) = K; returns (s, g, iterations, status)."""
    cdef double[::1] rv = np.ascontiguousarray(r, dtype=np.float64)
    cdef double s, g
    cdef int it, st
    with nogil:
        st = _scale(&rv[0], rv.shape[0], c, K, s0, &s, &g, &it)
    return s, g, it, st


cdef void _residuals(const double* x, const double* y, Py_ssize_t n, Py_ssize_t d, Py_ssize_t k,
                     const double* b1, const double* b2, double* r) noexcept nogil:
    cdef Py_ssize_t t, j
    cdef double acc
    for t in range(n):
        acc = y[t]
        if t < k:
            for j in range(d):
                acc -= x[t * d + j] * b1[j]
        else:
            for j in range(d):
                acc -= x[t * d + j] * b2[j]
        r[t] = acc


cdef int _wls(const double* x, const double* y, const double* w, Py_ssize_t lo, Py_ssize_t hi,
              Py_ssize_t d, double* A, double* out) noexcept nogil:
    """Weighted least squares on rows lo..hi-1 via Cholesky; 0 on success."""
    cdef Py_ssize_t t, i, j, l
    cdef double wt, acc, amax = 0.0
    for i in range(d * d):
        A[i] = 0.0
    for i in range(d):
        out[i] = 0.0
    for t in range(lo, hi):
        wt = w[t]
        if wt == 0.0:
            continue
        for i in range(d):
            acc = wt * x[t * d + i]
            out[i] += acc * y[t]
            for j in range(i + 1):
                A[i * d + j] += acc * x[t * d + j]
    for i in range(d):
        if A[i * d + i] > amax:
            amax = A[i * d + i]
    if amax <= 0.0:
        return 1
    # in-place lower Cholesky
    for j in range(d):
        acc = A[j * d + j]
        for l in range(j):
            acc -= A[j * d + l] * A[j * d + l]
        if acc <= 1e-24 * amax:
            return 1
        A[j * d + j] = sqrt(acc)
        for i in range(j + 1, d):
            acc = A[i * d + j]
            for l in range(j):
                acc -= A[i * d + l] * A[j * d + l]
            A[i * d + j] = acc / A[j * d + j]
    for i in range(d):
        acc = out[i]
        for l in range(i):
            acc -= A[i * d + l] * out[l]
        out[i] = acc / A[i * d + i]
    for i in range(d - 1, -1, -1):
        acc = out[i]
        for l in range(i + 1, d):
            acc -= A[l * d + i] * out[l]
        out[i] = acc / A[i * d + i]
    return 0


cdef int _irls(const double* x, const double* y, Py_ssize_t n, Py_ssize_t d, Py_ssize_t k,
               double* b1, double* b2, double s0, double c, double K, int max_iter, double tol,
               double* r, double* rt, double* w, double* work, double* trace,
               double* s_out, int* it_out) noexcept nogil:
    cdef double* A = work
    cdef double* n1 = work + d * d
    cdef double* n2 = n1 + d
    cdef double* t1 = n2 + d
    cdef double* t2 = t1 + d
    cdef double s, s_t, g, step, rel, inv, v, om, cs
    cdef int st, sit, it = 0, h, f1, f2, status = MAX_ITER, accepted
    cdef Py_ssize_t t, j
    cdef double wc = 6.0 / (c * c)

    _residuals(x, y, n, d, k, b1, b2, r)
    st = _scale(r, n, c, K, s0, &s, &g, &sit)
    it_out[0] = 0
    if st != OK:
        s_out[0] = 0.0
        return EXACT_FIT
    if trace != NULL:
        trace[0] = s
    while it < max_iter:
        inv = 1.0 / (c * s)
        for t in range(n):
            v = r[t] * inv
            v = v * v
            if v < 1.0:
                om = 1.0 - v
                w[t] = wc * om * om
            else:
                w[t] = 0.0
        f1 = _wls(x, y, w, 0, k, d, A, n1)
        f2 = _wls(x, y, w, k, n, d, A, n2)
        if f1 and f2:
            s_out[0] = s
            it_out[0] = it
            return SINGULAR
        if f1:
            for j in range(d):
                n1[j] = b1[j]
        if f2:
            for j in range(d):
                n2[j] = b2[j]
        step = 1.0
        accepted = 0
        for h in range(MAX_HALVINGS):
            for j in range(d):
                t1[j] = b1[j] + step * (n1[j] - b1[j])
                t2[j] = b2[j] + step * (n2[j] - b2[j])
            _residuals(x, y, n, d, k, t1, t2, rt)
            st = _scale(rt, n, c, K, s, &s_t, &g, &sit)
            if st != OK:
                for j in range(d):
                    b1[j] = t1[j]
                    b2[j] = t2[j]
                s_out[0] = 0.0
                it_out[0] = it + 1
                return EXACT_FIT
            if s_t <= s:
                accepted = 1
                break
            step *= 0.5
        if not accepted:
            s_out[0] = s
            it_out[0] = it
            return STALLED
        it += 1
        rel = (s - s_t) / s
        for j in range(d):
            b1[j] = t1[j]
            b2[j] = t2[j]
        s = s_t
        for t in range(n):
            r[t] = rt[t]
        if trace != NULL:
            trace[it] = s
        if rel < tol:
            status = CONVERGED
            break
    s_out[0] = s
    it_out[0] = it
    return status


def irls(x, y, Py_ssize_t k, b1, b2, double s0, double c, double K, int max_iter, double tol,
         trace=None):
    """Joint-scale IRLS with step halving.

    Returns ``(b1, b2, s, iterations, status)``; ``trace[0..iterations]``
    receives the accepted scales when given.
    """
    cdef double[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0], d = xv.shape[1]
    cdef cnp.ndarray[double, ndim=1, mode="c"] o1 = np.array(b1, dtype=np.float64, copy=True).reshape(d)
    cdef cnp.ndarray[double, ndim=1, mode="c"] o2 = np.array(b2, dtype=np.float64, copy=True).reshape(d)
    cdef double[::1] b1v = o1
    cdef double[::1] b2v = o2
    cdef double[::1] tv
    cdef double* tp = NULL
    if trace is not None:
        tv = trace
        if tv.shape[0] < max_iter + 1:
            raise ValueError("trace buffer too short")
        tp = &tv[0]
    cdef double* buf = <double*> malloc((3 * n + d * d + 4 * d) * sizeof(double))
    if buf == NULL:
        raise MemoryError()
    cdef double s
    cdef int it, status
    try:
        with nogil:
            status = _irls(&xv[0, 0], &yv[0], n, d, k, &b1v[0], &b2v[0], s0, c, K, max_iter, tol,
                           buf, buf + n, buf + 2 * n, buf + 3 * n, tp, &s, &it)
    finally:
        free(buf)
    return o1, o2, s, it, status
