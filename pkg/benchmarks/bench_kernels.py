"""Compare the compiled and numpy kernel backends.

Usage: python3 benchmarks/bench_kernels.py [--n 2048] [--repeat 5]

Times the scale solver, a full IRLS fit at one split, and a complete
profile sweep, then prints the speedup of each available backend over the
numpy fallback.  Both backends must agree to rounding, which is checked.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from lrdsest import _kernels
from lrdsest.estimator import FitConfig, profile_changepoint
from lrdsest.procgen import ErrorLawSpec, ModelSpec, RegressorLawSpec, synthesize
from lrdsest.rho import RhoKernel


def _use(module):
    _kernels.scale_solve = module.scale_solve
    _kernels.irls = module.irls


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=2048)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    model = ModelSpec(beta1=(0.0,), beta2=(2.0,), pi0=0.5,
                      error_law=ErrorLawSpec(alpha=0.4, sigma0=0.5),
                      regressor_law=RegressorLawSpec(thetas=(0.4,)))
    ds = synthesize(model, args.n, 1)
    kern = RhoKernel()
    c, K = kern.c, kern.K
    k = args.n // 2
    r = np.random.default_rng(0).standard_normal(args.n)
    b1, b2 = np.array([0.1]), np.array([1.9])
    cfg = FitConfig(bidirectional=False)

    original = (_kernels.scale_solve, _kernels.irls)
    rows, results = [], {}
    for name, mod in sorted(_kernels.backends().items()):
        _use(mod)
        t_scale = min(timeit.repeat(lambda: mod.scale_solve(r, c, K, 1.0), number=200, repeat=args.repeat)) / 200
        t_irls = min(timeit.repeat(lambda: mod.irls(ds.x, ds.y, k, b1, b2, 0.5, c, K, 200, 1e-10),
                                   number=5, repeat=args.repeat)) / 5
        t_sweep = min(timeit.repeat(lambda: profile_changepoint(ds, cfg), number=1, repeat=max(1, args.repeat // 2)))
        results[name] = (mod.scale_solve(r, c, K, 1.0)[0], profile_changepoint(ds, cfg).k_hat)
        rows.append((name, t_scale, t_irls, t_sweep))
    _kernels.scale_solve, _kernels.irls = original

    base = {name: (ts, ti, tw) for name, ts, ti, tw in rows}["python"]
    print(f"n = {args.n}")
    print(f"{'backend':<8} {'scale_solve':>14} {'irls':>12} {'sweep':>10}   speedup (scale/irls/sweep)")
    for name, ts, ti, tw in rows:
        print(f"{name:<8} {ts * 1e6:>11.1f} us {ti * 1e3:>9.2f} ms {tw:>8.2f} s   "
              f"{base[0] / ts:5.1f} / {base[1] / ti:5.1f} / {base[2] / tw:5.1f}")
    s_vals = [v[0] for v in results.values()]
    k_vals = {v[1] for v in results.values()}
    print(f"max scale disagreement {max(s_vals) - min(s_vals):.2e}, k_hat agree: {len(k_vals) == 1}")


if __name__ == "__main__":
    main()
