"""Pure numpy implementation of the hot kernels.

Mirrors ``_ckernels.pyx`` call for call; used when the extension is not
built or when ``LRDSEST_BACKEND=python``.
"""

from __future__ import annotations

import math

import numpy as np

OK, NO_SOLUTION, ALL_ZERO = 0, 1, 2
CONVERGED, MAX_ITER, STALLED, EXACT_FIT, SINGULAR = 0, 1, 2, 3, 4

_MAX_SCALE_ITER = 200
_MAX_HALVINGS = 30


def _g_and_d(r, s, c):
    with np.errstate(over="ignore"):
        v = np.square(r / (s * c))
    inside = v < 1.0
    vi = v[inside]
    n = r.shape[0]
    g = (np.sum(vi * (3.0 - vi * (3.0 - vi))) + (n - vi.shape[0])) / n
    # u psi(u) = 6 v (1 - v)^2 for the biweight
    D = 6.0 * np.sum(vi * np.square(1.0 - vi)) / n
    return g, D


def scale_solve(r, c, K, s0):
    """Largest s with mean(rho(r/s)) = K; returns (s, g, iterations, status)."""
    r = np.asarray(r, dtype=float)
    n = r.shape[0]
    a = np.abs(r)
    nz = a > 0.0
    n_nz = int(np.count_nonzero(nz))
    if n_nz == 0:
        return 0.0, 0.0, 0, ALL_ZERO
    if n_nz < K * n:
        return 0.0, n_nz / n, 0, NO_SOLUTION
    amax = float(a.max())
    amin = float(a[nz].min())
    u_k = c * math.sqrt(1.0 - (1.0 - K) ** (1.0 / 3.0))
    lo, hi = amin / c, amax / u_k
    s = s0 if lo < s0 < hi else math.sqrt(lo) * math.sqrt(hi)
    g = 0.0
    it = 0
    for it in range(1, _MAX_SCALE_ITER + 1):
        g, D = _g_and_d(r, s, c)
        f = g - K
        if f == 0.0:
            if D == 0.0:
                # flat at level K: every nonzero residual is rejected
                return amin / c, g, it, OK
            return s, g, it, OK
        if f > 0.0:
            lo = s
        else:
            hi = s
        if D > 0.0:
            s_new = s + f * s / D
        else:
            s_new = -1.0
        if not lo < s_new < hi:
            s_new = math.sqrt(lo) * math.sqrt(hi) if hi > 4.0 * lo else 0.5 * (lo + hi)
        if abs(s_new - s) <= 1e-14 * s or hi - lo <= 1e-15 * hi:
            s = s_new
            break
        s = s_new
    return s, g, it, OK


def residuals(x, y, k, b1, b2):
    r = np.empty_like(y)
    r[:k] = y[:k] - x[:k] @ b1
    r[k:] = y[k:] - x[k:] @ b2
    return r


def _wls(x, y, w):
    A = (x * w[:, None]).T @ x
    rhs = (x * w[:, None]).T @ y
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        return None
    if np.min(np.diag(L)) <= 1e-12 * math.sqrt(max(np.max(np.diag(A)), 1e-300)):
        return None
    z = np.linalg.solve(L, rhs)
    return np.linalg.solve(L.T, z)


def irls(x, y, k, b1, b2, s0, c, K, max_iter, tol, trace=None):
    """Joint-scale IRLS with step halving.

    Returns ``(b1, b2, s, iterations, status)``; ``trace[0..iterations]``
    receives the accepted scales when given.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    b1 = np.array(b1, dtype=float)
    b2 = np.array(b2, dtype=float)
    r = residuals(x, y, k, b1, b2)
    s, _, _, st = scale_solve(r, c, K, s0)
    if st != OK:
        return b1, b2, 0.0, 0, EXACT_FIT
    if trace is not None:
        trace[0] = s
    status = MAX_ITER
    it = 0
    while it < max_iter:
        w = np.where(np.abs(r) < c * s, (6.0 / c**2) * np.square(1.0 - np.square(r / (c * s))), 0.0)
        n1 = _wls(x[:k], y[:k], w[:k])
        n2 = _wls(x[k:], y[k:], w[k:])
        if n1 is None and n2 is None:
            return b1, b2, s, it, SINGULAR
        n1 = b1 if n1 is None else n1
        n2 = b2 if n2 is None else n2
        step = 1.0
        for _ in range(_MAX_HALVINGS):
            t1 = b1 + step * (n1 - b1)
            t2 = b2 + step * (n2 - b2)
            rt = residuals(x, y, k, t1, t2)
            st_s, _, _, st = scale_solve(rt, c, K, s)
            if st != OK:
                it += 1
                return t1, t2, 0.0, it, EXACT_FIT
            if st_s <= s:
                break
            step *= 0.5
        else:
            return b1, b2, s, it, STALLED
        it += 1
        rel = (s - st_s) / s
        b1, b2, s, r = t1, t2, st_s, rt
        if trace is not None:
            trace[it] = s
        if rel < tol:
            status = CONVERGED
            break
    return b1, b2, s, it, status
