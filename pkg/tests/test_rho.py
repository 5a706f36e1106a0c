from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats

from lrdsest.rho import (
    DEFAULT_C,
    RankNotFound,
    RhoKernel,
    consistency_constant,
    gaussian_expectation,
    hermite_coeffs,
    hermite_e,
    rate_constant,
    tune_constant,
)

C = DEFAULT_C


def truncated_even_moments(c: float, m_max: int) -> list[float]:
    """int_{-c}^{c} z^{2m} phi(z) dz via M_{2m} = (2m-1) M_{2m-2} - 2 c^{2m-1} phi(c)."""
    phi = math.exp(-0.5 * c * c) / math.sqrt(2 * math.pi)
    out = [math.erf(c / math.sqrt(2))]
    for m in range(1, m_max + 1):
        out.append((2 * m - 1) * out[-1] - 2 * c ** (2 * m - 1) * phi)
    return out


def closed_form_K(c: float) -> float:
    M = truncated_even_moments(c, 3)
    return 3 * M[1] / c**2 - 3 * M[2] / c**4 + M[3] / c**6 + math.erfc(c / math.sqrt(2))


def adaptive_K(c: float) -> float:
    k = RhoKernel(c)
    body, _ = integrate.quad(lambda z: k.rho(z) * stats.norm.pdf(z), -c, c, epsabs=1e-14, epsrel=1e-14, limit=200)
    return body + math.erfc(c / math.sqrt(2))


class TestRhoValues:
    def test_fixed_points(self):
        k = RhoKernel()
        assert k.rho(0.0) == 0.0
        assert k.rho(C) == 1.0 and k.rho(-C) == 1.0
        assert k.rho(C / 2) == 0.578125

    def test_flat_beyond_c(self):
        k = RhoKernel()
        x = np.array([1.0001, 2.0, 100.0]) * C
        assert np.all(k.rho(x) == 1.0)
        assert np.all(k.psi(x) == 0.0)
        assert float(k.psi(1.01 * C)) == 0.0
        assert float(k.psi(0.0)) == 0.0

    @given(st.floats(-50, 50, allow_nan=False))
    def test_symmetric_and_bounded(self, x):
        k = RhoKernel()
        assert k.rho(x) == k.rho(-x)
        assert 0.0 <= k.rho(x) <= 1.0

    def test_nondecreasing_on_positive_axis(self):
        k = RhoKernel()
        x = np.linspace(0, 2 * C, 4001)
        assert np.all(np.diff(k.rho(x)) >= 0)

    def test_sign_property(self):
        k = RhoKernel()
        x = np.linspace(-C, C, 2001)[1:-1]
        x = x[x != 0]
        assert np.all(x * k.psi(x) > 0)
        assert k.psi(C) == 0.0

    def test_psi_over_x_nonincreasing(self):
        k = RhoKernel()
        x = np.geomspace(1e-6, 2 * C, 2000)
        assert np.all(np.diff(k.psi(x) / x) <= 1e-15)

    def test_psi_prime_sign_change(self):
        # the biweight psi' is positive only up to c/sqrt(5), negative beyond it inside (0, c)
        k = RhoKernel()
        root = C / math.sqrt(5)
        assert np.all(k.psi_prime(np.linspace(0, root, 200)[:-1]) > 0)
        assert np.all(k.psi_prime(np.linspace(root, C, 200)[1:-1]) < 0)
        assert abs(float(k.psi_prime(root))) < 1e-14

    def test_weight_at_zero_is_psi_prime(self):
        k = RhoKernel()
        assert float(k.weight(0.0)) == pytest.approx(float(k.psi_prime(0.0)), rel=1e-15)

    def test_rho_inverse(self):
        k = RhoKernel()
        for level in (0.1, 0.5, 0.9):
            u = k.rho_inverse(level)
            assert 0 < u < C
            assert float(k.rho(u)) == pytest.approx(level, rel=1e-14)


def _fd_rel(f, g, x, h):
    fd = (f(x + h) - f(x - h)) / (2 * h)
    return np.max(np.abs(fd - g(x)) / np.maximum(np.abs(g(x)), 1e-3))


class TestDerivatives:
    grid = np.linspace(-1.5 * C, 1.5 * C, 1000)
    grid = grid[np.abs(np.abs(grid) - C) > 1e-3]

    def test_psi_at_half_c(self):
        k = RhoKernel()
        h = 1e-6
        fd = (k.rho(C / 2 + h) - k.rho(C / 2 - h)) / (2 * h)
        assert abs(fd - k.psi(C / 2)) / abs(k.psi(C / 2)) <= 1e-8

    @pytest.mark.parametrize("pair", ["psi", "psi_prime", "psi_second"])
    def test_finite_differences(self, pair):
        k = RhoKernel()
        lower = {"psi": k.rho, "psi_prime": k.psi, "psi_second": k.psi_prime}[pair]
        assert _fd_rel(lower, getattr(k, pair), self.grid, 1e-6) <= 1e-6

    def test_closed_forms(self):
        k = RhoKernel(2.0)
        x = 0.7
        v = (x / 2.0) ** 2
        assert float(k.psi(x)) == pytest.approx(6 * x / 4 * (1 - v) ** 2, rel=1e-15)
        assert float(k.psi_prime(x)) == pytest.approx(6 / 4 * (1 - v) * (1 - 5 * v), rel=1e-14)
        assert float(k.psi_second(x)) == pytest.approx(24 * x / 16 * (5 * v - 3), rel=1e-14)


class TestConsistencyConstant:
    def test_default_is_half_by_three_methods(self):
        assert abs(consistency_constant(RhoKernel()) - 0.5) <= 1e-10
        assert abs(adaptive_K(C) - 0.5) <= 1e-10
        assert abs(closed_form_K(C) - 0.5) <= 1e-12

    @pytest.mark.parametrize("c", [0.3, 1.0, 2.5, 6.0])
    def test_matches_adaptive(self, c):
        assert consistency_constant(RhoKernel(c)) == pytest.approx(adaptive_K(c), abs=1e-13)

    @pytest.mark.parametrize("c", [1.0, 2.5, 6.0])
    def test_matches_closed_form(self, c):
        # the moment recursion cancels badly for small c, so only c >= 1
        assert consistency_constant(RhoKernel(c)) == pytest.approx(closed_form_K(c), abs=1e-13)

    def test_limits(self):
        assert abs(consistency_constant(RhoKernel(1e-8)) - 1.0) <= 1e-6
        assert abs(consistency_constant(RhoKernel(1e8))) <= 1e-6

    def test_tune_reproduces_default(self):
        assert tune_constant(0.5) == pytest.approx(C, abs=1e-12)

    def test_kernel_K_cached(self):
        k = RhoKernel()
        assert k.K == k.K == consistency_constant(k)

    def test_expectation_of_polynomial(self):
        # E[Z^4] = 3 with a zero-width outer region handled by the tail argument
        val = gaussian_expectation(lambda z: z**4, 0.0, 30.0)
        assert val == pytest.approx(3.0, rel=1e-13)


class TestHermite:
    def test_polynomials(self):
        z = np.array([-1.3, 0.0, 0.4, 2.0])
        np.testing.assert_allclose(hermite_e(3, z), z**3 - 3 * z)
        np.testing.assert_allclose(hermite_e(4, z), z**4 - 6 * z**2 + 3)

    def test_rank_two(self):
        h = hermite_coeffs(RhoKernel())
        assert abs(h.coeffs[1]) <= 1e-10 and abs(h.coeffs[3]) <= 1e-10
        assert abs(h.coeffs[2]) > 1e-3
        assert h.q1 == 2
        for q in (5, 7):
            assert abs(h.coeffs[q]) <= 1e-10

    def test_J2_against_adaptive_oracle(self):
        k = RhoKernel()
        f = lambda z: (k.rho(z) - 0.5) * (z * z - 1) * stats.norm.pdf(z)
        body, _ = integrate.quad(f, -C, C, epsabs=1e-14, epsrel=1e-13)
        tail = 0.5 * 2 * C * stats.norm.pdf(C)  # (1 - K) * int_{|z|>c} He_2 phi
        assert hermite_coeffs(k).coeffs[2] == pytest.approx(body + tail, abs=1e-12)

    def test_J_by_piecewise_adaptive(self):
        k = RhoKernel()
        h = hermite_coeffs(k, q_max=6)
        for q in (2, 4, 6):
            val = sum(integrate.quad(lambda z: (k.rho(z) - k.K) * hermite_e(q, z) * stats.norm.pdf(z),
                                     a, b, limit=200, epsabs=1e-14)[0]
                      for a, b in ((-40, -C), (-C, C), (C, 40)))
            assert h.coeffs[q] == pytest.approx(val, abs=1e-11)

    def test_rate_example(self):
        h = hermite_coeffs(RhoKernel(), alpha=0.8, thetas=(0.4, 0.6))
        assert h.k == pytest.approx(0.6, abs=1e-15)

    def test_rate_constant_equal_exponents(self):
        assert rate_constant(2, 0.4, (0.4,)) == pytest.approx(0.4)

    @given(st.floats(0.01, 0.99), st.lists(st.floats(0.01, 0.99), min_size=1, max_size=4))
    def test_rate_constant_formula(self, alpha, thetas):
        k = rate_constant(2, alpha, thetas)
        assert k == min([alpha] + [(t + alpha) / 2 for t in thetas])

    def test_rank_not_found(self):
        with pytest.raises(RankNotFound):
            hermite_coeffs(RhoKernel(1e-9), K=1.0, q_max=4)

    def test_q_max_floor(self):
        with pytest.raises(ValueError):
            hermite_coeffs(RhoKernel(), q_max=3)
