"""Exact simulation of long-memory Gaussian errors and regressors.

Scalar series are drawn by circulant embedding of the Toeplitz covariance
(Davies-Harte); when the embedding is not nonnegative definite the n x n
Toeplitz matrix is factored directly.  Vector regressors are orthogonal
mixtures of independent scalar series.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg

from ._rng import stream

__all__ = [
    "CovarianceNotPSD",
    "Dataset",
    "DatasetFormatError",
    "ErrorLawSpec",
    "IdentifiabilityError",
    "ModelSpec",
    "RegressorLawSpec",
    "autocovariance",
    "dense_factor",
    "embedding_eigenvalues",
    "gen_scalar_lrd",
    "gen_vector_lrd",
    "read_csv",
    "regressor_autocovariance",
    "rotation",
    "synthesize",
    "write_csv",
]

KERNELS = ("fgn", "power")
SLOWLY_VARYING = ("one", "log")

EIG_CLIP = 1e-8
DENSE_LIMIT = 8192


class CovarianceNotPSD(ValueError):
    """The requested autocovariance is not a valid covariance for this length."""


class IdentifiabilityError(ValueError):
    """The two regimes share the same coefficients."""


class DatasetFormatError(ValueError):
    pass


def _check_kernel(kernel, slowly_varying="one"):
    if kernel not in KERNELS:
        raise ValueError(f"kernel must be one of {KERNELS}, got {kernel!r}")
    if slowly_varying not in SLOWLY_VARYING:
        raise ValueError(f"slowly_varying must be one of {SLOWLY_VARYING}, got {slowly_varying!r}")
    if kernel == "fgn" and slowly_varying != "one":
        raise ValueError("the fgn kernel has no slowly varying factor; use kernel='power'")


@dataclass(frozen=True)
class ErrorLawSpec:
    """Covariance law of the errors: gamma(0) = sigma0**2, gamma(t) ~ t**-alpha.

    ``kernel="fgn"`` is fractional Gaussian noise with Hurst index
    ``1 - alpha/2`` scaled to variance ``sigma0**2``.  ``kernel="power"`` is
    the literal ``gamma(t) = t**-alpha * L(t)`` for ``t >= 1``, which is only a
    valid covariance when ``sigma0**2`` is large enough (checked when drawing).
    ``sigma0=0`` with the fgn kernel gives noise-free errors.
    """

    alpha: float
    sigma0: float = 1.0
    kernel: str = "fgn"
    slowly_varying: str = "one"

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not self.sigma0 >= 0.0:
            raise ValueError(f"sigma0 must be nonnegative, got {self.sigma0}")
        _check_kernel(self.kernel, self.slowly_varying)
        if self.kernel == "power" and self.sigma0 == 0.0:
            raise ValueError("the power kernel needs sigma0 > 0")

    @property
    def hurst(self) -> float:
        return 1.0 - self.alpha / 2.0


def _slowly_varying(kind: str, t: np.ndarray) -> np.ndarray:
    if kind == "one":
        return np.ones_like(t)
    return np.log(math.e + t) / math.log(math.e + 1.0)


def _acv(exponent: float, var: float, kernel: str, slowly_varying: str, max_lag: int) -> np.ndarray:
    if max_lag < 0:
        raise ValueError("max_lag must be nonnegative")
    t = np.arange(max_lag + 1, dtype=float)
    if kernel == "fgn":
        h2 = 2.0 - exponent  # 2H with H = 1 - exponent/2
        g = 0.5 * (np.abs(t + 1.0) ** h2 - 2.0 * t**h2 + np.abs(t - 1.0) ** h2)
        g[0] = 1.0
        return var * g
    g = np.empty_like(t)
    g[0] = var
    g[1:] = t[1:] ** -exponent * _slowly_varying(slowly_varying, t[1:])
    return g


def autocovariance(spec: ErrorLawSpec, max_lag: int) -> np.ndarray:
    """gamma(0), ..., gamma(max_lag) of the error law."""
    return _acv(spec.alpha, spec.sigma0**2, spec.kernel, spec.slowly_varying, max_lag)


def embedding_eigenvalues(acv: np.ndarray) -> np.ndarray:
    """Eigenvalues of the size 2(len(acv)-1) circulant whose first row embeds acv."""
    row = np.concatenate([acv, acv[-2:0:-1]])
    return np.fft.fft(row).real


def dense_factor(acv: np.ndarray) -> np.ndarray:
    """Matrix root F with F F^T equal to the Toeplitz matrix of acv."""
    n = len(acv)
    if n > DENSE_LIMIT:
        raise CovarianceNotPSD(
            f"circulant embedding failed and n={n} exceeds the dense fallback limit {DENSE_LIMIT}"
        )
    T = linalg.toeplitz(acv)
    try:
        return linalg.cholesky(T, lower=True)
    except linalg.LinAlgError:
        pass
    w, V = linalg.eigh(T)
    if w[0] < -EIG_CLIP * max(1.0, abs(w[-1])):
        raise CovarianceNotPSD(f"Toeplitz covariance has eigenvalue {w[0]:.3e} < 0")
    return V * np.sqrt(np.clip(w, 0.0, None))


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return stream(seed, "series")


def _draw_from_acv(acv: np.ndarray, rng: np.random.Generator, info: dict | None = None) -> np.ndarray:
    # acv holds lags 0..n; the draw has length n
    n = len(acv) - 1
    if n == 1:
        if info is not None:
            info.update(method="direct", min_eigenvalue=float(acv[0]))
        return math.sqrt(acv[0]) * rng.standard_normal(1)
    row = np.concatenate([acv, acv[-2:0:-1]])
    lam = np.fft.fft(row).real
    lam_min = float(lam.min())
    if info is not None:
        info["min_eigenvalue"] = lam_min
    if lam_min >= -EIG_CLIP:
        m = len(lam)
        z = rng.standard_normal(m) + 1j * rng.standard_normal(m)
        w = np.fft.fft(np.sqrt(np.clip(lam, 0.0, None) / m) * z)
        if info is not None:
            info["method"] = "circulant"
        return w.real[:n].copy()
    if info is not None:
        info["method"] = "dense"
    return dense_factor(acv[:n]) @ rng.standard_normal(n)


def gen_scalar_lrd(spec: ErrorLawSpec, n: int, seed, info: dict | None = None) -> np.ndarray:
    """Draw n consecutive values of the stationary Gaussian error process.

    ``seed`` is an integer or a ``numpy.random.Generator``.  Pass a dict as
    ``info`` to receive the method used and the smallest embedding eigenvalue.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    return _draw_from_acv(autocovariance(spec, n), _as_rng(seed), info)


def rotation(angle_deg: float) -> np.ndarray:
    a = math.radians(angle_deg)
    return np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])


@dataclass(frozen=True)
class RegressorLawSpec:
    """Law of the d-dimensional regressors.

    Component series ``Z_i`` have memory exponents ``thetas[i]``; the
    regressors are ``X_t = A M^T Z_t`` with ``M`` the orthogonal ``mixing``
    matrix and ``A A^T = var0``.  For ``kernel="fgn"`` the components have
    unit variance; for ``kernel="power"`` their lag-t covariance is exactly
    ``t**-theta_i`` and ``var0`` must be diagonal in the mixed basis.
    """

    thetas: tuple[float, ...]
    mixing: np.ndarray | None = None
    var0: np.ndarray | None = None
    kernel: str = "fgn"

    def __post_init__(self):
        thetas = tuple(float(t) for t in np.atleast_1d(self.thetas))
        object.__setattr__(self, "thetas", thetas)
        d = len(thetas)
        if d < 1:
            raise ValueError("need at least one regressor")
        if any(not 0.0 < t < 1.0 for t in thetas):
            raise ValueError(f"thetas must lie in (0, 1), got {thetas}")
        _check_kernel(self.kernel)
        M = np.eye(d) if self.mixing is None else np.array(self.mixing, dtype=float).reshape(d, d)
        if np.max(np.abs(M.T @ M - np.eye(d))) > 1e-10:
            raise ValueError("mixing matrix is not orthogonal to 1e-10")
        V = np.eye(d) if self.var0 is None else np.array(self.var0, dtype=float).reshape(d, d)
        if np.max(np.abs(V - V.T)) > 1e-12:
            raise ValueError("var0 is not symmetric")
        try:
            linalg.cholesky(V, lower=True)
        except linalg.LinAlgError as exc:
            raise ValueError("var0 is not positive definite") from exc
        if self.kernel == "power":
            inner = M @ V @ M.T
            if np.max(np.abs(inner - np.diag(np.diag(inner)))) > 1e-10:
                raise ValueError("power kernel needs var0 = M^T diag(v) M")
        object.__setattr__(self, "mixing", M)
        object.__setattr__(self, "var0", V)

    @property
    def d(self) -> int:
        return len(self.thetas)

    def _component_var(self) -> np.ndarray:
        if self.kernel == "fgn":
            return np.ones(self.d)
        return np.diag(self.mixing @ self.var0 @ self.mixing.T).copy()

    def _outer(self) -> np.ndarray:
        # X_t = B Z_t
        if self.kernel == "fgn":
            return linalg.cholesky(self.var0, lower=True) @ self.mixing.T
        return self.mixing.T

    def to_dict(self) -> dict:
        return {
            "thetas": list(self.thetas),
            "mixing": self.mixing.tolist(),
            "var0": self.var0.tolist(),
            "kernel": self.kernel,
        }

    def __eq__(self, other):
        if not isinstance(other, RegressorLawSpec):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def __hash__(self):
        return hash(json.dumps(self.to_dict()))


def regressor_autocovariance(spec: RegressorLawSpec, max_lag: int) -> np.ndarray:
    """Array of shape (max_lag + 1, d, d) with Gamma(t) = E[X_1 X_{1+t}^T]."""
    B = spec._outer()
    comps = np.stack([
        _acv(th, v, spec.kernel, "one", max_lag) for th, v in zip(spec.thetas, spec._component_var())
    ], axis=1)
    return np.einsum("ij,tj,kj->tik", B, comps, B)


def gen_vector_lrd(spec: RegressorLawSpec, n: int, seed, info: list | None = None) -> np.ndarray:
    """Draw an (n, d) block of regressors; components use one generator in order."""
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = _as_rng(seed)
    cols = []
    for th, v in zip(spec.thetas, spec._component_var()):
        meta = {} if info is not None else None
        cols.append(_draw_from_acv(_acv(th, v, spec.kernel, "one", n), rng, meta))
        if info is not None:
            info.append(meta)
    Z = np.stack(cols, axis=1)
    return Z @ spec._outer().T


@dataclass(frozen=True)
class ModelSpec:
    """Two-phase regression: coefficients beta1 up to floor(n*pi0), beta2 after."""

    beta1: tuple[float, ...]
    beta2: tuple[float, ...]
    pi0: float
    error_law: ErrorLawSpec
    regressor_law: RegressorLawSpec

    def __post_init__(self):
        b1 = tuple(float(b) for b in np.atleast_1d(self.beta1))
        b2 = tuple(float(b) for b in np.atleast_1d(self.beta2))
        object.__setattr__(self, "beta1", b1)
        object.__setattr__(self, "beta2", b2)
        d = self.regressor_law.d
        if len(b1) != d or len(b2) != d:
            raise ValueError(f"beta1 and beta2 must have length d={d}")
        if b1 == b2:
            raise IdentifiabilityError("beta1 == beta2: the change-point is not identifiable")
        if not 0.0 < self.pi0 < 1.0:
            raise ValueError(f"pi0 must lie strictly inside (0, 1), got {self.pi0}")

    @property
    def d(self) -> int:
        return self.regressor_law.d

    def change_index(self, n: int) -> int:
        return int(math.floor(n * self.pi0))

    def to_dict(self) -> dict:
        return {
            "beta1": list(self.beta1),
            "beta2": list(self.beta2),
            "pi0": self.pi0,
            "error_law": asdict(self.error_law),
            "regressor_law": self.regressor_law.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModelSpec":
        return cls(
            beta1=tuple(data["beta1"]),
            beta2=tuple(data["beta2"]),
            pi0=float(data["pi0"]),
            error_law=ErrorLawSpec(**data["error_law"]),
            regressor_law=RegressorLawSpec(**data["regressor_law"]),
        )


@dataclass(frozen=True, eq=False)
class Dataset:
    """Observed responses ``y`` (n,) and regressors ``x`` (n, d)."""

    y: np.ndarray
    x: np.ndarray
    seed: int | None = None
    truth: ModelSpec | None = field(default=None)

    def __post_init__(self):
        y = np.ascontiguousarray(self.y, dtype=float).reshape(-1)
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        x = np.ascontiguousarray(x)
        if x.shape[0] != y.shape[0]:
            raise ValueError("x and y lengths differ")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(x))):
            raise ValueError("dataset contains non-finite values")
        n, d = x.shape
        if n <= 2 * (d + 1):
            raise ValueError(f"need n > 2(d+1) = {2 * (d + 1)} observations, got {n}")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    def replace_y(self, y) -> "Dataset":
        return Dataset(y=y, x=self.x, seed=self.seed, truth=self.truth)


def synthesize(model: ModelSpec, n: int, seed) -> Dataset:
    """Draw a dataset; errors and regressors come from independent streams."""
    d = model.d
    if n <= 2 * (d + 1):
        raise ValueError(f"need n > 2(d+1) = {2 * (d + 1)}")
    if isinstance(seed, np.random.Generator):
        ss = seed.integers(0, 2**63)
        err_rng, reg_rng = stream(ss, "errors"), stream(ss, "regressors")
        seed_out = None
    else:
        err_rng, reg_rng = stream(seed, "errors"), stream(seed, "regressors")
        seed_out = int(seed)
    eps = gen_scalar_lrd(model.error_law, n, err_rng)
    x = gen_vector_lrd(model.regressor_law, n, reg_rng)
    k0 = model.change_index(n)
    y = np.empty(n)
    y[:k0] = x[:k0] @ np.asarray(model.beta1)
    y[k0:] = x[k0:] @ np.asarray(model.beta2)
    y += eps
    return Dataset(y=y, x=x, seed=seed_out, truth=model)


def write_csv(dataset: Dataset, path) -> None:
    """Write ``t,y,x1..xd`` with shortest round-trip float formatting."""
    buf = io.StringIO()
    buf.write(",".join(["t", "y"] + [f"x{i + 1}" for i in range(dataset.d)]) + "\n")
    for t in range(dataset.n):
        row = [str(t + 1), repr(float(dataset.y[t]))] + [repr(float(v)) for v in dataset.x[t]]
        buf.write(",".join(row) + "\n")
    Path(path).write_text(buf.getvalue(), encoding="utf-8", newline="\n")


def read_csv(path) -> Dataset:
    """Parse a dataset CSV; errors name the offending line."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DatasetFormatError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    d = len(header) - 2
    if d < 1 or header[:2] != ["t", "y"] or header[2:] != [f"x{i + 1}" for i in range(d)]:
        raise DatasetFormatError(f"{path}: line 1: header must be t,y,x1,...,xd, got {','.join(header)}")
    y, x = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != d + 2:
            raise DatasetFormatError(f"{path}: line {lineno}: expected {d + 2} fields, got {len(row)}")
        try:
            vals = [float(v) for v in row[1:]]
        except ValueError as exc:
            raise DatasetFormatError(f"{path}: line {lineno}: {exc}") from None
        if not all(math.isfinite(v) for v in vals):
            raise DatasetFormatError(f"{path}: line {lineno}: non-finite value")
        y.append(vals[0])
        x.append(vals[1:])
    try:
        return Dataset(y=np.array(y), x=np.array(x).reshape(len(y), d))
    except ValueError as exc:
        raise DatasetFormatError(f"{path}: {exc}") from None
