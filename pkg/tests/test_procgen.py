from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lrdsest.procgen import (
    CovarianceNotPSD,
    Dataset,
    DatasetFormatError,
    ErrorLawSpec,
    IdentifiabilityError,
    ModelSpec,
    RegressorLawSpec,
    autocovariance,
    dense_factor,
    embedding_eigenvalues,
    gen_scalar_lrd,
    gen_vector_lrd,
    read_csv,
    regressor_autocovariance,
    rotation,
    synthesize,
    write_csv,
)
from lrdsest._rng import stream

from conftest import make_model

N_MC = 2**15
REPS = 50
LAGS = np.array([1, 2, 4, 8, 16])


def sample_acv(x: np.ndarray, lags) -> np.ndarray:
    """Sample autocovariance with known zero mean and unbiased divisor n - h."""
    n = len(x)
    f = np.fft.rfft(x, 2 * n)
    full = np.fft.irfft(f * np.conj(f), 2 * n)[:n]
    return np.array([full[h] / (n - h) for h in lags])


def sample_cross(x: np.ndarray, y: np.ndarray, lag: int) -> float:
    n = len(x)
    return float(np.dot(x[: n - lag], y[lag:]) / (n - lag))


def within_3se(estimates: np.ndarray, target) -> np.ndarray:
    est = np.asarray(estimates)
    mean = est.mean(axis=0)
    se = est.std(axis=0, ddof=1) / math.sqrt(est.shape[0])
    return np.abs(mean - target) <= 3 * se


class TestAutocovariance:
    def test_power_example(self):
        g = autocovariance(ErrorLawSpec(alpha=0.5, sigma0=1.0, kernel="power"), 4)
        assert g[4] == 0.5
        assert g[0] == 1.0

    def test_fgn_example(self):
        g = autocovariance(ErrorLawSpec(alpha=0.5, sigma0=1.0), 1)
        assert g[1] == pytest.approx(0.5 * (2**1.5 - 2), rel=1e-15)
        assert g[1] == pytest.approx(0.41421356237309503, rel=1e-15)

    @given(st.floats(0.05, 0.95), st.floats(0.1, 5.0), st.sampled_from(["fgn", "power"]))
    def test_lag_zero_is_variance(self, alpha, sigma0, kernel):
        g = autocovariance(ErrorLawSpec(alpha=alpha, sigma0=sigma0, kernel=kernel), 3)
        assert g[0] == pytest.approx(sigma0**2, rel=1e-15)

    def test_log_slowly_varying_normalized(self):
        spec = ErrorLawSpec(alpha=0.4, sigma0=2.0, kernel="power", slowly_varying="log")
        g = autocovariance(spec, 10)
        assert g[1] == pytest.approx(1.0, rel=1e-15)
        assert g[10] == pytest.approx(10**-0.4 * math.log(math.e + 10) / math.log(math.e + 1), rel=1e-14)

    def test_fgn_tail_is_power_law(self):
        g = autocovariance(ErrorLawSpec(alpha=0.4), 10000)
        h = 0.8
        # gamma(t) ~ H(2H-1) t^(2H-2)
        assert g[10000] == pytest.approx(h * (2 * h - 1) * 10000 ** (2 * h - 2), rel=1e-4)

    def test_validation(self):
        with pytest.raises(ValueError):
            ErrorLawSpec(alpha=1.0)
        with pytest.raises(ValueError):
            ErrorLawSpec(alpha=0.4, sigma0=-1.0)
        with pytest.raises(ValueError):
            ErrorLawSpec(alpha=0.4, kernel="fgn", slowly_varying="log")
        with pytest.raises(ValueError):
            ErrorLawSpec(alpha=0.4, kernel="bogus")


class TestScalarGenerator:
    def test_n_one(self):
        x = gen_scalar_lrd(ErrorLawSpec(alpha=0.4, sigma0=3.0), 1, 7)
        assert x.shape == (1,)
        assert x[0] == pytest.approx(3.0 * stream(7, "series").standard_normal(1)[0], rel=1e-12)

    def test_deterministic(self):
        spec = ErrorLawSpec(alpha=0.3)
        np.testing.assert_array_equal(gen_scalar_lrd(spec, 1000, 5), gen_scalar_lrd(spec, 1000, 5))
        assert not np.array_equal(gen_scalar_lrd(spec, 1000, 5), gen_scalar_lrd(spec, 1000, 6))

    def test_circulant_used_for_fgn(self):
        info = {}
        gen_scalar_lrd(ErrorLawSpec(alpha=0.4), 4096, 1, info)
        assert info["method"] == "circulant"
        assert info["min_eigenvalue"] >= -1e-8

    def test_dense_fallback(self):
        # embedding eigenvalues below -1e-8 but a PSD Toeplitz covariance
        spec = ErrorLawSpec(alpha=0.4, sigma0=math.sqrt(1.175), kernel="power")
        info = {}
        gen_scalar_lrd(spec, 8, 3, info)
        assert info["method"] == "dense"
        assert info["min_eigenvalue"] < -1e-8
        acv = autocovariance(spec, 7)
        F = dense_factor(acv)
        from scipy.linalg import toeplitz

        assert np.max(np.abs(F @ F.T - toeplitz(acv))) <= 1e-8

    def test_not_psd(self):
        with pytest.raises(CovarianceNotPSD):
            gen_scalar_lrd(ErrorLawSpec(alpha=0.4, sigma0=1.0, kernel="power"), 512, 1)

    def test_embedding_of_fgn_nonnegative(self):
        lam = embedding_eigenvalues(autocovariance(ErrorLawSpec(alpha=0.8), 2**12))
        assert lam.min() >= -1e-8

    @pytest.mark.parametrize("spec", [
        ErrorLawSpec(alpha=0.4, sigma0=0.5),
        ErrorLawSpec(alpha=0.4, sigma0=math.sqrt(2.0), kernel="power"),
        ErrorLawSpec(alpha=0.6, sigma0=math.sqrt(2.0), kernel="power", slowly_varying="log"),
    ], ids=["fgn", "power", "power-log"])
    def test_acv_fidelity(self, spec):
        lags = np.arange(1, 21)
        est, means = [], []
        for r in range(REPS):
            x = gen_scalar_lrd(spec, N_MC, stream(99, "acv", r))
            est.append(sample_acv(x, lags))
            means.append(x.mean())
        target = autocovariance(spec, 20)[lags]
        ok = within_3se(np.array(est), target)
        assert ok.all(), (lags[~ok], np.mean(est, axis=0)[~ok], target[~ok])
        assert within_3se(np.array(means)[:, None], 0.0).all()


class TestRegressors:
    def test_d1_reduces_to_scalar(self):
        law = RegressorLawSpec(thetas=(0.3,))
        x = gen_vector_lrd(law, 500, stream(4, "regressors"))
        z = gen_scalar_lrd(ErrorLawSpec(alpha=0.3), 500, stream(4, "regressors"))
        np.testing.assert_allclose(x[:, 0], z, rtol=0, atol=1e-14)

    def test_validation(self):
        with pytest.raises(ValueError):
            RegressorLawSpec(thetas=(0.3, 0.5), mixing=[[1, 0.1], [0, 1]])
        with pytest.raises(ValueError):
            RegressorLawSpec(thetas=(0.3, 0.5), var0=[[1, 2], [2, 1]])
        with pytest.raises(ValueError):
            RegressorLawSpec(thetas=(1.3,))

    def test_rotation_orthogonal(self):
        M = rotation(45)
        np.testing.assert_allclose(M.T @ M, np.eye(2), atol=1e-15)

    def test_independent_coordinates(self):
        law = RegressorLawSpec(thetas=(0.3, 0.7))
        est = []
        for r in range(REPS):
            x = gen_vector_lrd(law, N_MC, stream(11, "cross", r))
            est.append([sample_cross(x[:, 0], x[:, 1], h) for h in range(11)])
        assert within_3se(np.array(est), 0.0).all()

    @pytest.mark.parametrize("kernel", ["fgn", "power"])
    def test_mixed_gamma(self, kernel):
        M = rotation(45)
        var0 = M.T @ np.diag([2.0, 2.0]) @ M if kernel == "power" else np.array([[1.0, 0.3], [0.3, 2.0]])
        law = RegressorLawSpec(thetas=(0.3, 0.7), mixing=M, var0=var0, kernel=kernel)
        lags = [1, 2, 4, 8, 16]
        G = regressor_autocovariance(law, 16)
        if kernel == "power":
            for t in lags:
                literal = M.T @ np.diag([t**-0.3, t**-0.7]) @ M
                np.testing.assert_allclose(G[t], literal, atol=1e-15)
        np.testing.assert_allclose(G[0], var0, atol=1e-14)
        est = []
        for r in range(REPS):
            x = gen_vector_lrd(law, N_MC, stream(12, kernel, r))
            est.append([[sample_cross(x[:, i], x[:, j], t) for i in range(2) for j in range(2)] for t in lags])
        target = np.array([G[t].reshape(-1) for t in lags])
        assert within_3se(np.array(est), target).all()


class TestModelAndDataset:
    def test_identifiability(self):
        with pytest.raises(IdentifiabilityError):
            make_model(beta1=(1.0,), beta2=(1.0,))

    def test_pi0_bounds(self):
        with pytest.raises(ValueError):
            make_model(pi0=1.0)

    def test_noise_free_limit(self):
        m = make_model(sigma0=1e-6, beta1=(1.0,), beta2=(2.0,))
        ds = synthesize(m, 100, 3)
        k0 = m.change_index(100)
        r = np.concatenate([ds.y[:k0] - ds.x[:k0, 0] * 1.0, ds.y[k0:] - ds.x[k0:, 0] * 2.0])
        assert np.max(np.abs(r)) <= 1e-5

    def test_deterministic(self):
        m = make_model()
        a, b = synthesize(m, 300, 8), synthesize(m, 300, 8)
        np.testing.assert_array_equal(a.y, b.y)
        np.testing.assert_array_equal(a.x, b.x)
        assert a.seed == 8 and a.truth == m

    def test_error_regressor_independence(self):
        m = make_model(sigma0=1.0)
        est = []
        for r in range(REPS):
            ds = synthesize(m, 8192, 40_000 + r)
            k0 = m.change_index(8192)
            eps = ds.y.copy()
            eps[:k0] -= ds.x[:k0, 0] * 0.0
            eps[k0:] -= ds.x[k0:, 0] * 2.0
            est.append(np.mean(eps * ds.x[:, 0]))
        assert within_3se(np.array(est)[:, None], 0.0).all()

    def test_dataset_validation(self):
        with pytest.raises(ValueError):
            Dataset(y=np.zeros(4), x=np.zeros((4, 1)))
        with pytest.raises(ValueError):
            Dataset(y=np.array([1.0, np.nan, 0, 0, 0, 0, 1]), x=np.ones((7, 1)))

    def test_model_dict_roundtrip(self):
        m = make_model(thetas=(0.3, 0.6), beta1=(0.0, 1.0), beta2=(1.0, 1.0), mixing=rotation(30))
        assert ModelSpec.from_dict(m.to_dict()) == m


class TestCsv:
    def test_roundtrip(self, tmp_path):
        ds = synthesize(make_model(thetas=(0.3, 0.5), beta1=(0.0, 0.0), beta2=(1.0, 2.0)), 50, 2)
        p = tmp_path / "d.csv"
        write_csv(ds, p)
        raw = p.read_bytes()
        assert raw.splitlines()[0] == b"t,y,x1,x2"
        assert b"\r" not in raw and len(raw.splitlines()) == 51
        back = read_csv(p)
        np.testing.assert_array_equal(back.y, ds.y)
        np.testing.assert_array_equal(back.x, ds.x)

    def test_row_errors(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("t,y,x1\n" + "".join(f"{i},{i}.0,1.0\n" for i in range(1, 8)) + "8,1.0\n")
        with pytest.raises(DatasetFormatError, match="line 9"):
            read_csv(p)
        p.write_text("t,y,x1\n1,1.0,1.0\n2,inf,1.0\n")
        with pytest.raises(DatasetFormatError, match="line 3"):
            read_csv(p)
        p.write_text("a,b\n")
        with pytest.raises(DatasetFormatError, match="line 1"):
            read_csv(p)
