"""Joint M-scale of segmented residuals."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .rho import RhoKernel

__all__ = [
    "AllZeroResiduals",
    "NoSolution",
    "ScaleSolution",
    "dn_diagnostic",
    "mad_scale",
    "scale_function",
    "solve_scale",
]

#: Phi^{-1}(3/4); median(|r|)/Z0 is the normalized MAD.
Z0 = 0.6744897501960817


class NoSolution(ValueError):
    """mean(rho(r/s)) < K for every s > 0 (too many exact zeros)."""


class AllZeroResiduals(NoSolution):
    pass


@dataclass(frozen=True)
class ScaleSolution:
    s: float
    g_at_s: float
    iterations: int
    bracket: tuple[float, float]


def scale_function(residuals, s: float, kernel: RhoKernel) -> float:
    """g(s) = mean(rho(r/s))."""
    with np.errstate(over="ignore", divide="ignore"):
        return float(np.mean(kernel.rho(np.asarray(residuals, dtype=float) / s)))


def mad_scale(residuals) -> float:
    return float(np.median(np.abs(residuals))) / Z0


def solve_scale(residuals, kernel: RhoKernel | None = None, K: float | None = None,
                s0: float | None = None) -> ScaleSolution:
    """Largest root s of mean(rho(r/s)) = K.

    ``residuals`` is the concatenation of both segments' residuals.  The
    search starts from ``s0`` (default: normalized MAD) inside the bracket
    ``[min|r|/c, max|r|/rho^{-1}(K)]`` and alternates Newton and bisection
    steps, keeping ``g(lo) >= K > g(hi)``; since g is nonincreasing in s the
    limit is the supremum of the solution set.

    Raises
    ------
    AllZeroResiduals
        Every residual is exactly zero.
    NoSolution
        Fewer than K*n residuals are nonzero.
    """
    kernel = kernel or RhoKernel()
    K = kernel.K if K is None else K
    r = np.ascontiguousarray(residuals, dtype=float).reshape(-1)
    if r.size == 0:
        raise ValueError("need at least one residual")
    if not np.all(np.isfinite(r)):
        raise ValueError("residuals must be finite")
    if not 0.0 < K < 1.0:
        raise ValueError("K must lie in (0, 1)")
    # rescale by a power of two (exact), centred on the exponent range of the
    # nonzero residuals, so neither end overflows or turns subnormal
    a = np.abs(r[r != 0.0])
    e = 0
    if a.size:
        e = (int(np.frexp(a.max())[1]) + int(np.frexp(a.min())[1])) // 2
    rs = np.ldexp(r, -e)
    s0 = mad_scale(rs) if s0 is None else math.ldexp(float(s0), -e)
    s, _, it, status = _kernels.scale_solve(rs, kernel.c, K, s0)
    s = math.ldexp(s, e)
    if status == _kernels.ALL_ZERO:
        raise AllZeroResiduals("all residuals are zero")
    if status == _kernels.NO_SOLUTION:
        nz = int(np.count_nonzero(r))
        raise NoSolution(f"only {nz} of {r.size} residuals are nonzero; need at least K*n = {K * r.size:.2f}")
    bracket = (float(a.min()) / kernel.c, float(a.max()) / kernel.rho_inverse(K))
    return ScaleSolution(s=s, g_at_s=scale_function(r, s, kernel), iterations=it, bracket=bracket)


def dn_diagnostic(r1, r2, s: float, kernel: RhoKernel | None = None) -> float:
    """D_n = n^{-1} sum (r/s) psi(r/s) over both segments.

    Positive whenever some residual satisfies 0 < |r| < c s.
    """
    if not s > 0:
        raise ValueError("s must be positive")
    kernel = kernel or RhoKernel()
    u = np.concatenate([np.ravel(r1), np.ravel(r2)]) / s
    return float(np.sum(u * kernel.psi(u)) / u.size) if u.size else 0.0
