"""Masked-aggregation kernels: numba vs pure numpy.

    python benchmarks/bench_kernels.py [--nodes 2708] [--dim 256] [--blocks 8] [--repeat 5]

Times the forward pass and both adjoints on an SBM graph roughly the size
of Cora. The first numba call (compilation) is excluded.
"""
import argparse
import time

import numpy as np

from bgcl import _accel, kernels
from bgcl.encoder import block_bounds
from bgcl.graphdata import generate_sbm, normalize_adjacency


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--nodes", type=int, default=2708)
    p.add_argument("--dim", type=int, default=256)
    p.add_argument("--blocks", type=int, default=8)
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args()

    per_block = args.nodes // 7
    g = generate_sbm(per_block, 7, 0.01, 0.0005, 8, 1.0, seed=0)
    adj = normalize_adjacency(g)
    rng = np.random.default_rng(0)
    xw = rng.standard_normal((1, g.n_nodes, args.dim))
    masks = (rng.random((1, args.blocks, adj.nnz)) < 0.8).astype(np.float64)
    grad = rng.standard_normal((g.n_nodes, args.dim))
    bounds = block_bounds(args.dim, args.blocks)

    calls = {
        "forward": lambda nb: kernels.masked_aggregate(
            adj.indptr, adj.cols, adj.vals, xw, bounds, masks, use_numba=nb),
        "grad_xw": lambda nb: kernels.masked_aggregate_grad_xw(
            adj.t_indptr, adj.t_perm, adj.rows, adj.vals, grad, bounds, masks, use_numba=nb),
        "grad_masks": lambda nb: kernels.masked_aggregate_grad_masks(
            adj.rows, adj.cols, adj.vals, xw, grad, bounds, use_numba=nb),
    }
    print(f"graph: {g.n_nodes} nodes, {adj.nnz} stored entries; dim {args.dim}, "
          f"{args.blocks} blocks; numba available: {_accel.HAS_NUMBA}")
    print(f"{'kernel':<12}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}{'max diff':>12}")
    for name, call in calls.items():
        t_np = best_of(lambda: call(False), args.repeat)
        if _accel.HAS_NUMBA:
            call(True)  # compile
            t_nb = best_of(lambda: call(True), args.repeat)
            diff = np.max(np.abs(call(True) - call(False)))
            print(f"{name:<12}{1e3 * t_np:>12.2f}{1e3 * t_nb:>12.2f}{t_np / t_nb:>10.2f}{diff:>12.1e}")
        else:
            print(f"{name:<12}{1e3 * t_np:>12.2f}{'-':>12}{'-':>10}{'-':>12}")


if __name__ == "__main__":
    main()
