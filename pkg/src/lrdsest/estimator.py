"""S-estimation of the two-phase regression.

For a split index k (the first k observations follow beta1), the joint
scale s_n(beta1, beta2, k) is minimized over the coefficients by fast-S
initialization followed by joint-scale IRLS; the change-point is the split
with the smallest minimized scale.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernels
from ._rng import stream
from .mscale import dn_diagnostic, mad_scale
from .procgen import Dataset
from .rho import RhoKernel

__all__ = [
    "DegenerateSegment",
    "FitConfig",
    "FitResult",
    "GradientResult",
    "SegmentFit",
    "SegmentedResiduals",
    "admissible_splits",
    "estimating_equations",
    "fit_segments",
    "ls_baseline_fit",
    "profile_changepoint",
    "scale_gradient",
    "segment_residuals",
]


class DegenerateSegment(ValueError):
    """A segment's design matrix is rank deficient."""


@dataclass(frozen=True)
class FitConfig:
    """Optimizer settings.

    ``trim`` is the minimal segment fraction; segments also keep at least
    d + 2 points.  ``bidirectional`` adds a backward warm-started sweep to
    the forward one and keeps the smaller scale at each split.  ``box``
    bounds the coefficient sup-norm used only to flag estimates that leave
    the compact parameter set.
    """

    kernel: RhoKernel = field(default_factory=RhoKernel)
    trim: float = 0.1
    n_subsets: int = 50
    irls_max_iter: int = 200
    irls_tol: float = 1e-10
    seed: int = 0
    bidirectional: bool = True
    polish_tol: float = 1e-12
    box: float = 1e6

    def __post_init__(self):
        if not 0.0 < self.trim < 0.5:
            raise ValueError("trim must lie in (0, 0.5)")
        if self.n_subsets < 1 or self.irls_max_iter < 1:
            raise ValueError("n_subsets and irls_max_iter must be positive")
        if not self.irls_tol >= 0.0:
            raise ValueError("irls_tol must be nonnegative")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["kernel"] = {"c": self.kernel.c, "kind": self.kernel.kind}
        return out


@dataclass(frozen=True)
class SegmentedResiduals:
    r1: np.ndarray
    r2: np.ndarray

    @property
    def joint(self) -> np.ndarray:
        return np.concatenate([self.r1, self.r2])


def segment_residuals(dataset: Dataset, k: int, beta1, beta2) -> SegmentedResiduals:
    x, y = dataset.x, dataset.y
    return SegmentedResiduals(
        r1=y[:k] - x[:k] @ np.asarray(beta1, dtype=float),
        r2=y[k:] - x[k:] @ np.asarray(beta2, dtype=float),
    )


def admissible_splits(n: int, d: int, trim: float) -> tuple[int, int]:
    """Inclusive range of split indices with both segments long enough."""
    m = max(d + 2, math.ceil(trim * n))
    lo, hi = m, n - m
    if lo > hi:
        raise ValueError(f"no admissible split for n={n}, d={d}, trim={trim}")
    return lo, hi


def estimating_equations(dataset: Dataset, k: int, beta1, beta2, s: float,
                         kernel: RhoKernel) -> tuple[np.ndarray, np.ndarray]:
    """n^{-1} sum psi(r_t/s) X_t over each segment."""
    res = segment_residuals(dataset, k, beta1, beta2)
    n = dataset.n
    e1 = dataset.x[:k].T @ kernel.psi(res.r1 / s) / n
    e2 = dataset.x[k:].T @ kernel.psi(res.r2 / s) / n
    return e1, e2


@dataclass(frozen=True)
class GradientResult:
    grad1: np.ndarray
    grad2: np.ndarray
    D_n: float
    reliable: bool


def scale_gradient(dataset: Dataset, k: int, beta1, beta2, s: float,
                   kernel: RhoKernel) -> GradientResult:
    """Gradient of the implicit joint scale with respect to each coefficient block.

    ds/dbeta_j = -(n D_n)^{-1} sum_{t in segment j} psi(r_t/s) X_t.  When
    D_n <= 1e-12 the result is returned with ``reliable=False``.
    """
    res = segment_residuals(dataset, k, beta1, beta2)
    D = dn_diagnostic(res.r1, res.r2, s, kernel)
    n = dataset.n
    if D <= 1e-12:
        nan = np.full(dataset.d, np.nan)
        return GradientResult(nan, nan.copy(), D, False)
    g1 = -(dataset.x[:k].T @ kernel.psi(res.r1 / s)) / (n * D)
    g2 = -(dataset.x[k:].T @ kernel.psi(res.r2 / s)) / (n * D)
    return GradientResult(g1, g2, D, True)


@dataclass
class SegmentFit:
    beta1: np.ndarray
    beta2: np.ndarray
    s: float
    iterations: int
    status: int
    diagnostics: dict = field(default_factory=dict)
    trace: np.ndarray | None = None

    @property
    def exact_fit(self) -> bool:
        return self.status == _kernels.EXACT_FIT


_STATUS_NAMES = {
    _kernels.CONVERGED: "converged",
    _kernels.MAX_ITER: "max_iter",
    _kernels.STALLED: "stalled",
    _kernels.EXACT_FIT: "exact_fit",
    _kernels.SINGULAR: "singular",
}


def _check_split(n: int, d: int, k: int, trim: float) -> None:
    m = max(d + 2, trim * n)
    if k < m or n - k < m:
        raise ValueError(f"split k={k} leaves a segment shorter than max(d+2, trim*n)={m:g}")


def _check_rank(x: np.ndarray, what: str) -> None:
    if np.linalg.matrix_rank(x) < x.shape[1]:
        raise DegenerateSegment(f"{what}: design matrix has rank < d={x.shape[1]}")


def _exact_subset(x, y, idx):
    try:
        return np.linalg.solve(x[idx], y[idx])
    except np.linalg.LinAlgError:
        return None


def _ols(x, y):
    b, *_ = np.linalg.lstsq(x, y, rcond=None)
    return b


def _cold_scale(x, y, k, b1, b2):
    r = _kernels._pykernels.residuals(x, y, k, b1, b2)
    return mad_scale(r)


def _fast_s(x, y, k, config: FitConfig, rng: np.random.Generator):
    """Best of random exact-fit subsets (plus OLS) after two IRLS steps."""
    c, K = config.kernel.c, config.kernel.K
    n, d = x.shape
    cands = [(_ols(x[:k], y[:k]), _ols(x[k:], y[k:]))]
    for _ in range(config.n_subsets):
        i1 = rng.choice(k, size=d, replace=False)
        i2 = k + rng.choice(n - k, size=d, replace=False)
        b1 = _exact_subset(x, y, i1)
        b2 = _exact_subset(x, y, i2)
        if b1 is None or b2 is None:
            continue
        cands.append((b1, b2))
    best = None
    for b1, b2 in cands:
        s0 = _cold_scale(x, y, k, b1, b2)
        out = _kernels.irls(x, y, k, b1, b2, s0, c, K, 2, 0.0)
        if out[4] == _kernels.SINGULAR:
            continue
        if best is None or out[2] < best[2]:
            best = out
            if out[4] == _kernels.EXACT_FIT:
                break
    return best


def _run_irls(x, y, k, b1, b2, s0, config: FitConfig, trace=None):
    c, K = config.kernel.c, config.kernel.K
    if s0 is None or not s0 > 0:
        s0 = _cold_scale(x, y, k, b1, b2)
    return _kernels.irls(x, y, k, b1, b2, s0, c, K, config.irls_max_iter, config.irls_tol, trace)


def _polish(x, y, k, b1, b2, s, kernel: RhoKernel, tol: float, max_iter: int = 100):
    """Newton iterations on the first-order conditions with a scale safeguard."""
    c, K = kernel.c, kernel.K
    n = x.shape[0]
    segs = (slice(0, k), slice(k, n))

    def eq_norm(bs, s_):
        r = _kernels._pykernels.residuals(x, y, k, bs[0], bs[1])
        p = kernel.psi(r / s_)
        return max(float(np.linalg.norm(x[sl].T @ p[sl])) / n for sl in segs), r

    bs = [np.array(b1, dtype=float), np.array(b2, dtype=float)]
    norm, r = eq_norm(bs, s)
    it = 0
    for it in range(max_iter):
        if norm <= tol:
            break
        u = r / s
        psi, dpsi, w = kernel.psi(u), kernel.psi_prime(u), kernel.weight(u)
        steps = []
        for sl, b in zip(segs, bs):
            xs = x[sl]
            g = xs.T @ psi[sl]
            H = (xs * dpsi[sl, None]).T @ xs
            try:
                np.linalg.cholesky(H)
            except np.linalg.LinAlgError:
                # indefinite curvature: fall back to the IRLS direction
                H = (xs * w[sl, None]).T @ xs
            try:
                steps.append(s * np.linalg.solve(H, g))
            except np.linalg.LinAlgError:
                steps.append(np.zeros_like(b))
        t = 1.0
        accepted = False
        for _ in range(40):
            trial = [b + t * st for b, st in zip(bs, steps)]
            rt = _kernels._pykernels.residuals(x, y, k, trial[0], trial[1])
            s_t, _, _, status = _kernels.scale_solve(rt, c, K, s)
            if status != _kernels.OK:
                return trial[0], trial[1], 0.0, it + 1
            norm_t, rt = eq_norm(trial, s_t)
            if s_t < s or (s_t <= s * (1.0 + 1e-14) and norm_t < norm):
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        bs, s, norm, r = trial, s_t, norm_t, rt
    return bs[0], bs[1], s, it


def _diagnostics(dataset: Dataset, k: int, b1, b2, s: float, kernel: RhoKernel) -> dict:
    if not s > 0:
        return {"D_n": None, "eq_b_residual_norm": 0.0, "eq_c_residual_norm": 0.0,
                "gradient_check_error": None, "exact_fit": True}
    e1, e2 = estimating_equations(dataset, k, b1, b2, s, kernel)
    grad = scale_gradient(dataset, k, b1, b2, s, kernel)
    fd = _fd_gradient(dataset, k, b1, b2, kernel, s)
    err = None
    if grad.reliable:
        err = float(np.max(np.abs(np.concatenate([grad.grad1, grad.grad2]) - fd)))
    return {
        "D_n": grad.D_n,
        "eq_b_residual_norm": float(np.linalg.norm(e1)),
        "eq_c_residual_norm": float(np.linalg.norm(e2)),
        "gradient_check_error": err,
        "exact_fit": False,
    }


def _scale_of(dataset, k, b1, b2, kernel, s0):
    r = segment_residuals(dataset, k, b1, b2).joint
    s, _, _, status = _kernels.scale_solve(r, kernel.c, kernel.K, s0)
    return s if status == _kernels.OK else 0.0


def _fd_gradient(dataset, k, b1, b2, kernel, s, h=None):
    """Central differences of the joint scale in every coefficient."""
    b = np.concatenate([np.asarray(b1, float), np.asarray(b2, float)])
    d = dataset.d
    out = np.empty(2 * d)
    for j in range(2 * d):
        hj = h if h is not None else 1e-6 * max(1.0, abs(b[j]))
        bp, bm = b.copy(), b.copy()
        bp[j] += hj
        bm[j] -= hj
        sp = _scale_of(dataset, k, bp[:d], bp[d:], kernel, s)
        sm = _scale_of(dataset, k, bm[:d], bm[d:], kernel, s)
        out[j] = (sp - sm) / (2.0 * hj)
    return out


def fit_segments(dataset: Dataset, k: int, config: FitConfig | None = None, start=None,
                 polish: bool = True, trace: bool = False) -> SegmentFit:
    """Minimize the joint scale over (beta1, beta2) for a fixed split k.

    ``start`` is an optional ``(beta1, beta2, s)`` warm start; without it the
    fast-S initialization is used.  With ``polish`` the result is refined by
    Newton steps until the first-order conditions hold to ``polish_tol``.
    """
    config = config or FitConfig()
    x, y = dataset.x, dataset.y
    n, d = x.shape
    _check_split(n, d, k, config.trim)
    _check_rank(x[:k], "segment 1")
    _check_rank(x[k:], "segment 2")
    buf = np.zeros(config.irls_max_iter + 1) if trace else None
    if start is None:
        rng = stream(config.seed, "fit", "init", k)
        init = _fast_s(x, y, k, config, rng)
        if init is None:
            raise DegenerateSegment(f"every initial candidate is singular at k={k}")
        b1, b2, s0 = init[0], init[1], init[2]
    else:
        b1, b2, s0 = start
    b1, b2, s, it, status = _run_irls(x, y, k, b1, b2, s0, config, buf)
    if status == _kernels.SINGULAR:
        raise DegenerateSegment(f"weighted design is singular in both segments at k={k}")
    if trace:
        assert np.all(np.diff(buf[: it + 1]) <= 0.0), "IRLS scale increased"
    if polish and status != _kernels.EXACT_FIT:
        b1, b2, s, _ = _polish(x, y, k, b1, b2, s, config.kernel, config.polish_tol)
    diag = _diagnostics(dataset, k, b1, b2, s, config.kernel)
    diag["status"] = _STATUS_NAMES[status]
    return SegmentFit(np.asarray(b1), np.asarray(b2), float(s), it, status, diag,
                      buf[: it + 1] if trace else None)


@dataclass
class FitResult:
    """Estimates at the profile minimizer plus the full profile."""

    beta1_hat: np.ndarray
    beta2_hat: np.ndarray
    pi_hat: float
    k_hat: int
    sigma_hat: float
    ks: np.ndarray
    s_profile: np.ndarray
    iterations: np.ndarray
    diagnostics: dict
    config: dict
    method: str = "S"

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "beta1": [float(v) for v in self.beta1_hat],
            "beta2": [float(v) for v in self.beta2_hat],
            "pi_hat": float(self.pi_hat),
            "k_hat": int(self.k_hat),
            "sigma_hat": float(self.sigma_hat),
            "profile": [float(v) for v in self.s_profile],
            "profile_k": [int(v) for v in self.ks],
            "diagnostics": self.diagnostics,
            "config_echo": self.config,
        }


def _nonzero_count(x, y, k, b1, b2) -> int:
    return int(np.count_nonzero(_kernels._pykernels.residuals(x, y, k, b1, b2)))


def _sweep(x, y, ks, config: FitConfig):
    m, d = len(ks), x.shape[1]
    s_out = np.empty(m)
    b1_out = np.empty((m, d))
    b2_out = np.empty((m, d))
    it_out = np.zeros(m, dtype=np.int64)
    state = None
    for i, k in enumerate(ks):
        fresh = None
        if state is None:
            init = _fast_s(x, y, k, config, stream(config.seed, "fit", "init", k))
            if init is None:
                raise DegenerateSegment(f"every initial candidate is singular at k={k}")
            state = init[:3]
        out = _run_irls(x, y, k, state[0], state[1], state[2], config)
        if out[4] in (_kernels.MAX_ITER, _kernels.SINGULAR):
            # warm start stalled: retry from a fresh subset search
            init = _fast_s(x, y, k, config, stream(config.seed, "fit", "init", k))
            if init is not None:
                fresh = _run_irls(x, y, k, init[0], init[1], init[2], config)
                if fresh[4] != _kernels.SINGULAR and (out[4] == _kernels.SINGULAR or fresh[2] < out[2]):
                    out = fresh
        if out[4] == _kernels.SINGULAR:
            raise DegenerateSegment(f"weighted design is singular in both segments at k={k}")
        b1, b2, s, it, _ = out
        s_out[i], b1_out[i], b2_out[i], it_out[i] = s, b1, b2, it
        state = (b1, b2, s if s > 0 else None)
    return s_out, b1_out, b2_out, it_out


def profile_changepoint(dataset: Dataset, config: FitConfig | None = None) -> FitResult:
    """Evaluate the minimized joint scale at every admissible split.

    The change-point estimate is the split with the smallest scale (ties go
    to the smallest k; exact-fit splits rank first, ordered by their count of
    nonzero residuals).  The winning split is refit with Newton polishing.
    """
    config = config or FitConfig()
    x, y = dataset.x, dataset.y
    n, d = x.shape
    k_lo, k_hi = admissible_splits(n, d, config.trim)
    _check_rank(x[:k_lo], "segment 1 at the smallest split")
    _check_rank(x[k_hi:], "segment 2 at the largest split")
    ks = np.arange(k_lo, k_hi + 1)

    s, b1, b2, its = _sweep(x, y, ks, config)
    if config.bidirectional:
        rs, rb1, rb2, rits = _sweep(x, y, ks[::-1], config)
        rs, rb1, rb2, rits = rs[::-1], rb1[::-1], rb2[::-1], rits[::-1]
        better = rs < s
        s = np.where(better, rs, s)
        b1 = np.where(better[:, None], rb1, b1)
        b2 = np.where(better[:, None], rb2, b2)
        its = its + rits

    zero = np.flatnonzero(s == 0.0)
    if zero.size:
        counts = [_nonzero_count(x, y, ks[i], b1[i], b2[i]) for i in zero]
        i_hat = int(zero[int(np.argmin(counts))])
    else:
        i_hat = int(np.argmin(s))
    k_hat = int(ks[i_hat])

    fb1, fb2, fs = b1[i_hat], b2[i_hat], s[i_hat]
    if fs > 0:
        fb1, fb2, fs, _ = _polish(x, y, k_hat, fb1, fb2, fs, config.kernel, config.polish_tol)
        fs = min(fs, s[i_hat])
    s = s.copy()
    s[i_hat] = fs
    assert s[i_hat] <= s.min(), "profile minimum property violated"

    diag = _diagnostics(dataset, k_hat, fb1, fb2, fs, config.kernel)
    diag["outside_box"] = bool(max(np.max(np.abs(fb1)), np.max(np.abs(fb2))) > config.box)
    diag["n_candidates"] = int(ks.size)
    return FitResult(
        beta1_hat=np.asarray(fb1, dtype=float),
        beta2_hat=np.asarray(fb2, dtype=float),
        pi_hat=k_hat / n,
        k_hat=k_hat,
        sigma_hat=float(fs),
        ks=ks,
        s_profile=s,
        iterations=its,
        diagnostics=diag,
        config=config.to_dict(),
    )


def ls_baseline_fit(dataset: Dataset, config: FitConfig | None = None) -> FitResult:
    """Least-squares analogue: OLS per segment, scale = residual RMS."""
    config = config or FitConfig()
    x, y = dataset.x, dataset.y
    n, d = x.shape
    k_lo, k_hi = admissible_splits(n, d, config.trim)
    _check_rank(x[:k_lo], "segment 1 at the smallest split")
    _check_rank(x[k_hi:], "segment 2 at the largest split")
    ks = np.arange(k_lo, k_hi + 1)
    xx = np.einsum("ti,tj->tij", x, x)
    xy = x * y[:, None]
    yy = y * y
    cxx, cxy, cyy = np.cumsum(xx, axis=0), np.cumsum(xy, axis=0), np.cumsum(yy)
    A1, r1, q1 = cxx[ks - 1], cxy[ks - 1], cyy[ks - 1]
    A2, r2, q2 = cxx[-1] - A1, cxy[-1] - r1, cyy[-1] - q1
    b1 = np.linalg.solve(A1, r1[..., None])[..., 0]
    b2 = np.linalg.solve(A2, r2[..., None])[..., 0]
    ssr = (q1 - np.sum(b1 * r1, axis=1)) + (q2 - np.sum(b2 * r2, axis=1))
    s = np.sqrt(np.clip(ssr, 0.0, None) / n)
    i_hat = int(np.argmin(s))
    k_hat = int(ks[i_hat])
    fb1, fb2 = _ols(x[:k_hat], y[:k_hat]), _ols(x[k_hat:], y[k_hat:])
    res = segment_residuals(dataset, k_hat, fb1, fb2)
    # the direct RMS may differ from the cumulative-sum profile in the last bits
    fs = min(float(np.sqrt(np.mean(res.joint**2))), float(s.min()))
    s[i_hat] = fs
    diag = {
        "eq_b_residual_norm": float(np.linalg.norm(x[:k_hat].T @ res.r1) / n),
        "eq_c_residual_norm": float(np.linalg.norm(x[k_hat:].T @ res.r2) / n),
        "n_candidates": int(ks.size),
    }
    return FitResult(
        beta1_hat=fb1, beta2_hat=fb2, pi_hat=k_hat / n, k_hat=k_hat, sigma_hat=fs,
        ks=ks, s_profile=s, iterations=np.zeros(ks.size, dtype=np.int64),
        diagnostics=diag, config=config.to_dict(), method="LS",
    )
