"""Time each hot kernel in its numba and numpy flavours.

    python benchmarks/bench_kernels.py [--repeat 5]

Numba timings exclude the first (compiling) call.
"""
import argparse
import time

import numpy as np

from zisae import _kernels as K
from zisae import nngp


def cases(n=2000, m=15, M=500, seed=0):
    rng = np.random.default_rng(seed)
    coords = rng.uniform(0, 40, (n, 2))
    g = nngp.build_graph(coords, m)
    B, F = nngp.correlation_factors(g, 0.45)
    w = rng.standard_normal(g.n)
    r = rng.standard_normal(g.n)
    prec = np.full(g.n, 2.0)
    z = rng.standard_normal(g.n)
    U = 2000
    eta, mean = rng.normal(size=(U, M)), rng.normal(3, 1, (U, M))
    var1 = rng.uniform(0.2, 1, M)
    ub, un = rng.random((U, M)), rng.random((U, M))
    q = rng.uniform(0, 40, (5000, 2))
    return {
        "ordered_neighbors": (g.coords, m),
        "knn_query": (q, coords, 5),
        "corr_factors": (g.site_dist, g.nn_dist, g.counts, 0.45, g.jitter),
        "nngp_residuals": (w, g.neighbors, B),
        "w_sweep": (g.neighbors, B, 1.5 * F, g.rev_ptr, g.rev_site, g.rev_pos, r, prec, z),
        "ppd_draws": (eta, mean, var1, 1e-6, 2, ub, un, True),
    }


def clock(fn, args, repeat, fresh=None):
    best = np.inf
    for _ in range(repeat):
        a = (fresh(),) + args if fresh else args
        t = time.perf_counter()
        fn(*a)
        best = min(best, time.perf_counter() - t)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--n", type=int, default=2000)
    args = ap.parse_args()
    rng = np.random.default_rng(1)
    print(f"{'kernel':<20}{'numba (ms)':>12}{'numpy (ms)':>12}{'speedup':>10}")
    for name, a in cases(args.n).items():
        nb, npy = K.VARIANTS[name]
        fresh = (lambda: rng.standard_normal(args.n)) if name == "w_sweep" else None
        clock(nb, a, 1, fresh)  # compile
        t_nb = clock(nb, a, args.repeat, fresh)
        t_np = clock(npy, a, max(1, args.repeat // 2), fresh)
        print(f"{name:<20}{1e3 * t_nb:>12.2f}{1e3 * t_np:>12.2f}{t_np / t_nb:>9.1f}x")


if __name__ == "__main__":
    main()
