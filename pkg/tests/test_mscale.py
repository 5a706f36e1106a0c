from __future__ import annotations

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import integrate, optimize, stats

from lrdsest.mscale import (
    Z0,
    AllZeroResiduals,
    NoSolution,
    dn_diagnostic,
    mad_scale,
    scale_function,
    solve_scale,
)
from lrdsest.rho import RhoKernel

KERN = RhoKernel()
K = KERN.K

residual_vectors = arrays(
    np.float64, st.integers(5, 200),
    elements=st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False, allow_subnormal=False),
).filter(lambda r: np.count_nonzero(r) > 0.5 * r.size + 1)


def test_z0():
    assert Z0 == pytest.approx(stats.norm.ppf(0.75), rel=1e-15)
    assert mad_scale(np.array([-1.0, 1.0])) == pytest.approx(1 / Z0)


@pytest.mark.parametrize("r0", [1e-3, 0.7, 5.0])
def test_constant_residuals(r0):
    r = np.where(np.arange(101) % 2 == 0, r0, -r0)
    # independent root-find on rho(r0/s) = K
    s_star = optimize.brentq(lambda s: float(KERN.rho(r0 / s)) - K, r0 / KERN.c * 1.0000001, 1e6 * r0, xtol=1e-300, rtol=1e-15)
    sol = solve_scale(r)
    assert sol.s == pytest.approx(s_star, rel=1e-10)
    assert sol.s == pytest.approx(r0 / KERN.rho_inverse(K), rel=1e-10)


@given(residual_vectors, st.sampled_from([1e-3, 1.0, 1e3]))
def test_equivariance(r, lam):
    s = solve_scale(r).s
    # the root is determined to ~eps/D_n; flat ties (D_n ~ 0) have no stable supremum
    assume(dn_diagnostic(r, r[:0], s) > 1e-3)
    assert abs(solve_scale(lam * r).s - lam * s) <= 1e-11 * lam * s


@given(residual_vectors)
def test_root_certificate_and_supremum(r):
    sol = solve_scale(r)
    assert sol.s > 0
    assert abs(sol.g_at_s - K) <= 1e-12 * K
    assert scale_function(r, sol.s * (1 + 1e-6), KERN) < K
    lo, hi = sol.bracket
    assert lo <= sol.s <= hi


def test_equivariance_random_vectors():
    gen = np.random.default_rng(77)
    for i in range(1000):
        r = gen.standard_normal(gen.integers(10, 300)) * gen.uniform(0.1, 10)
        s = solve_scale(r).s
        for lam in (1e-3, 1.0, 1e3):
            assert abs(solve_scale(lam * r).s - lam * s) <= 1e-11 * lam * s


def test_supremum_with_flat_region():
    # mean(rho) equals K on an interval when half the residuals sit beyond c*s
    r = np.array([1.0, -1.0, 1e6, -1e6])
    kern = RhoKernel()
    sol = solve_scale(r, kern)
    assert np.isclose(scale_function(r, sol.s, kern), K, rtol=0, atol=1e-12)
    assert scale_function(r, sol.s * (1 + 1e-6), kern) < K


def test_fisher_consistency():
    eps = np.random.default_rng(2024).normal(0, 2.0, 100_000)
    assert abs(solve_scale(eps).s - 2.0) / 2.0 <= 0.02


def test_degenerate():
    with pytest.raises(AllZeroResiduals):
        solve_scale(np.zeros(10))
    r = np.zeros(10)
    r[:4] = 1.0
    with pytest.raises(NoSolution):
        solve_scale(r)
    # half nonzero is enough for K = 1/2: the flat root sits at min|r|/c.
    # g touches K with cubic tangency there, so doubles resolve s only to ~eps**(1/3)
    r[:5] = 1.0
    sol = solve_scale(r)
    assert sol.s == pytest.approx(1.0 / KERN.c, rel=1e-5)
    assert abs(sol.g_at_s - K) <= 1e-12 * K


def test_warm_start_irrelevant():
    r = np.random.default_rng(1).standard_normal(500)
    s = solve_scale(r).s
    for s0 in (1e-6, 0.3, 100.0):
        assert solve_scale(r, s0=s0).s == pytest.approx(s, rel=1e-13)


def test_other_K():
    r = np.random.default_rng(3).standard_normal(400)
    sol = solve_scale(r, K=0.2)
    assert abs(sol.g_at_s - 0.2) <= 1e-12 * 0.2


class TestDn:
    def test_zero_cases(self):
        assert dn_diagnostic(np.zeros(3), np.zeros(4), 1.0) == 0.0
        assert dn_diagnostic(np.full(3, 5.0), np.full(2, -9.0), 1.0) == 0.0

    def test_gaussian_margin(self):
        z = np.random.default_rng(5).standard_normal(10_000)
        dn = dn_diagnostic(z[:4000], z[4000:], 1.0)
        oracle, _ = integrate.quad(lambda u: u * KERN.psi(u) * stats.norm.pdf(u), -KERN.c, KERN.c)
        assert dn >= 0.01
        assert dn == pytest.approx(oracle, abs=0.02)

    @given(arrays(np.float64, 10, elements=st.one_of(st.just(0.0), st.floats(1e-6, 3), st.floats(-3, -1e-6))))
    def test_positive_when_inside(self, r):
        inside = (r != 0) & (np.abs(r) < KERN.c)
        dn = dn_diagnostic(r[:5], r[5:], 1.0)
        assert (dn > 0) == bool(inside.any())

    def test_needs_positive_s(self):
        with pytest.raises(ValueError):
            dn_diagnostic(np.ones(2), np.ones(2), 0.0)
