"""Compare the compiled and numpy log-sum-exp kernels, and a full barycenter call.

    python3 benchmarks/bench_lse.py [--sizes 100 500 1000 2000]
"""
import argparse
import timeit

import numpy as np

from fedirl.gridworld import shared_lattice
from fedirl.ot import BarycenterConfig, backend, build_cost_matrix, entropic_barycenter
from fedirl.ot import _lse_fallback
from fedirl.ot.backend import BACKEND

try:
    from fedirl.ot import _lse
except ImportError:
    _lse = None


def bench(fn, *args, number=5):
    return min(timeit.repeat(lambda: fn(*args), number=number, repeat=3)) / number


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--sizes", type=int, nargs="+", default=[100, 500, 1000, 2000])
    args = parser.parse_args()
    print(f"active backend: {BACKEND}")
    if _lse is None:
        print("compiled extension not built; only the numpy kernel is timed")
    print(f"{'kernel':>10} {'n':>6} {'numpy_ms':>10} {'cython_ms':>10} {'speedup':>8} {'max_abs_diff':>13}")
    rng = np.random.default_rng(0)
    for n in args.sizes:
        pts = rng.uniform(0, 5, size=(n, 2))
        c = ((pts[:, None] - pts[None]) ** 2).sum(-1)
        g = rng.normal(size=n)
        for name in ("lse_rows", "lse_cols"):
            ref = getattr(_lse_fallback, name)
            t_np = bench(ref, c, g, 0.1)
            if _lse is None:
                print(f"{name:>10} {n:>6} {1e3 * t_np:>10.2f} {'-':>10} {'-':>8} {'-':>13}")
                continue
            fast = getattr(_lse, name)
            t_cy = bench(fast, c, g, 0.1)
            diff = np.abs(fast(c, g, 0.1) - ref(c, g, 0.1)).max()
            print(f"{name:>10} {n:>6} {1e3 * t_np:>10.2f} {1e3 * t_cy:>10.2f} {t_np / t_cy:>8.2f} {diff:>13.2e}")
    if _lse is not None:
        barycenter_comparison()


def barycenter_comparison(width=25, height=5, clients=3):
    """Full barycenter on a 500-point lattice with each backend."""
    cost = build_cost_matrix(shared_lattice(width, height))
    measures = np.random.default_rng(1).dirichlet(np.ones(cost.n), size=clients)
    config = BarycenterConfig(outer_iters=5)
    out = {}
    for name, impl in (("numpy", _lse_fallback), ("cython", _lse)):
        backend._impl = impl
        out[name] = (bench(entropic_barycenter, measures, cost, config, number=1),
                     entropic_barycenter(measures, cost, config))
    backend._impl = _lse
    diff = np.abs(out["numpy"][1] - out["cython"][1]).max()
    print(f"barycenter n={cost.n}: numpy {out['numpy'][0]:.3f}s, cython {out['cython'][0]:.3f}s, "
          f"speedup {out['numpy'][0] / out['cython'][0]:.2f}, max_abs_diff {diff:.2e}")


if __name__ == "__main__":
    main()
