"""Beaton-Tukey rho family, its derivatives, and Gaussian functionals of it.

The loss is ``rho(x) = 3v - 3v**2 + v**3`` with ``v = (x/c)**2`` on ``|x| <= c``
and 1 beyond.  Expectations under the standard normal are computed by
Gauss-Legendre quadrature on ``[-c, c]`` (where the integrand is a polynomial
times the normal density) plus the closed-form Gaussian tail, which is exact
to rounding.  A single Gauss-Hermite rule over the whole line is not: the
kink in the third derivative at ``+-c`` limits it to about 1e-5.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre
from scipy import special

__all__ = [
    "DEFAULT_C",
    "HermiteAnalysis",
    "RankNotFound",
    "RhoKernel",
    "consistency_constant",
    "gaussian_expectation",
    "hermite_coeffs",
    "hermite_e",
    "rate_constant",
    "tune_constant",
]

#: Tuning constant with E[rho(Z)] = 1/2 (50% breakdown M-scale).
DEFAULT_C = 1.547644980928226

_N_NODES = 200
_RANK_TOL = 1e-8


class RankNotFound(ValueError):
    """All Hermite coefficients vanish up to the requested order."""


@dataclass(frozen=True)
class RhoKernel:
    """Beaton-Tukey biweight rho with tuning constant ``c``.

    Parameters
    ----------
    c : float
        Rejection point; rho is 1 and psi is 0 for ``|x| >= c``.
    kind : str
        Only ``"beaton_tukey"`` is implemented.
    """

    c: float = DEFAULT_C
    kind: str = "beaton_tukey"
    _K: float | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not (self.c > 0 and math.isfinite(self.c)):
            raise ValueError(f"tuning constant must be positive and finite, got {self.c}")
        if self.kind != "beaton_tukey":
            raise ValueError(f"unknown rho kind {self.kind!r}")

    @property
    def K(self) -> float:
        """Consistency constant E[rho(Z)], Z ~ N(0, 1)."""
        if self._K is None:
            object.__setattr__(self, "_K", consistency_constant(self))
        return self._K

    def _clip(self, x):
        # every value beyond c is flat, so clipping avoids overflow in squares
        return np.clip(np.asarray(x, dtype=float), -2.0 * self.c, 2.0 * self.c)

    def rho(self, x):
        v = np.minimum(np.square(self._clip(x) / self.c), 1.0)
        return v * (3.0 - v * (3.0 - v))

    def psi(self, x):
        x = self._clip(x)
        v = np.square(x / self.c)
        out = (6.0 / self.c**2) * x * np.square(1.0 - v)
        return np.where(v < 1.0, out, 0.0)

    def psi_prime(self, x):
        x = self._clip(x)
        v = np.square(x / self.c)
        out = (6.0 / self.c**2) * (1.0 - v) * (1.0 - 5.0 * v)
        return np.where(v < 1.0, out, 0.0)

    def psi_second(self, x):
        x = self._clip(x)
        v = np.square(x / self.c)
        out = (24.0 / self.c**4) * x * (5.0 * v - 3.0)
        return np.where(v < 1.0, out, 0.0)

    def weight(self, x):
        """IRLS weight psi(x)/x, extended by psi'(0) at the origin."""
        v = np.square(self._clip(x) / self.c)
        return np.where(v < 1.0, (6.0 / self.c**2) * np.square(1.0 - v), 0.0)

    def rho_inverse(self, level: float) -> float:
        """The unique u in (0, c) with rho(u) = level, for level in (0, 1)."""
        if not 0.0 < level < 1.0:
            raise ValueError("level must lie in (0, 1)")
        return self.c * math.sqrt(1.0 - (1.0 - level) ** (1.0 / 3.0))


@lru_cache(maxsize=None)
def _legendre_nodes(n: int) -> tuple[np.ndarray, np.ndarray]:
    return legendre.leggauss(n)


def gaussian_expectation(inner, outer: float, c: float, tail_moments=None, n_nodes: int = _N_NODES) -> float:
    """E[f(Z)] for f equal to ``inner`` on [-c, c] and constant ``outer`` beyond.

    ``tail_moments`` optionally replaces ``outer * P(|Z| > c)`` when the outer
    piece is not constant (e.g. a Hermite polynomial); it must return the
    exact integral over ``|z| > c``.
    """
    t, w = _legendre_nodes(n_nodes)
    # phi is below 1e-340 past 40: clipping keeps nodes where the mass is
    half = min(c, 40.0)
    z = half * t
    body = half * np.dot(w, inner(z) * np.exp(-0.5 * z * z)) / math.sqrt(2.0 * math.pi)
    if tail_moments is not None:
        return float(body + tail_moments)
    return float(body + outer * special.erfc(c / math.sqrt(2.0)))


def consistency_constant(kernel: RhoKernel) -> float:
    """K = E[rho(Z)] for standard normal Z."""
    return gaussian_expectation(kernel.rho, 1.0, kernel.c)


def tune_constant(target: float = 0.5) -> float:
    """Tuning constant c solving E[rho(Z)] = target."""
    from scipy.optimize import brentq

    if not 0.0 < target < 1.0:
        raise ValueError("target must lie in (0, 1)")
    return brentq(lambda c: consistency_constant(RhoKernel(c)) - target, 1e-3, 50.0, xtol=1e-15, rtol=1e-15)


def hermite_e(q: int, z):
    """Probabilists' Hermite polynomial He_q evaluated at z."""
    z = np.asarray(z, dtype=float)
    h_prev, h = np.ones_like(z), z
    if q == 0:
        return h_prev
    for j in range(1, q):
        h_prev, h = h, z * h - j * h_prev
    return h


@dataclass(frozen=True)
class HermiteAnalysis:
    """Hermite expansion of chi = rho - K and the resulting rate constant."""

    q1: int
    coeffs: dict[int, float]
    k: float | None
    K: float
    c: float

    def to_dict(self) -> dict:
        return {
            "c": self.c,
            "K": self.K,
            "q1": self.q1,
            "J": {str(q): v for q, v in sorted(self.coeffs.items())},
            "k": self.k,
        }


def rate_constant(q1: int, alpha: float, thetas) -> float:
    """k = min(alpha*q1/2, (theta_i + alpha)/2)."""
    cands = [alpha * q1 / 2.0] + [(th + alpha) / 2.0 for th in thetas]
    return min(cands)


def hermite_coeffs(kernel: RhoKernel, K: float | None = None, q_max: int = 8,
                   alpha: float | None = None, thetas=()) -> HermiteAnalysis:
    """Coefficients J_q = E[chi(Z) He_q(Z)] for q = 1..q_max.

    The Hermite rank ``q1`` is the first q with ``|J_q| >= 1e-8``.  ``k`` is
    filled in when ``alpha`` is given.
    """
    if q_max < 4:
        raise ValueError("q_max must be at least 4")
    if K is None:
        K = kernel.K
    c = kernel.c
    phi_c = math.exp(-0.5 * c * c) / math.sqrt(2.0 * math.pi)
    coeffs = {}
    for q in range(1, q_max + 1):
        # int_{|z|>c} He_q phi = 2 He_{q-1}(c) phi(c) for even q, 0 for odd q
        tail = 2.0 * (1.0 - K) * float(hermite_e(q - 1, c)) * phi_c if q % 2 == 0 else 0.0
        coeffs[q] = gaussian_expectation(
            lambda z, q=q: (kernel.rho(z) - K) * hermite_e(q, z), 0.0, c, tail_moments=tail
        )
    q1 = next((q for q in coeffs if abs(coeffs[q]) >= _RANK_TOL), None)
    if q1 is None:
        raise RankNotFound(f"|J_q| < {_RANK_TOL} for all q <= {q_max}")
    k = rate_constant(q1, alpha, thetas) if alpha is not None else None
    return HermiteAnalysis(q1=q1, coeffs=coeffs, k=k, K=K, c=c)
