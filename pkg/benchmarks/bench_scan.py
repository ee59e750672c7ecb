"""Benchmark the exact top-k scan: numba kernel vs pure-numpy fallback.

Times scan_top_k on a random unit-norm matrix for every requested backend
and thread count, reports best-of-N wall time and throughput, and checks
that all configurations return identical neighbor lists.

Usage:
    python benchmarks/bench_scan.py
    python benchmarks/bench_scan.py --rows 500000 --dim 384 --threads 1 2 8
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from leakage_audit import _kernels, nn_search
from leakage_audit.types import EmbeddingMatrix


def build_inputs(rows: int, dim: int, probes: int, seed: int):
    rng = np.random.default_rng(seed)
    matrix = nn_search.normalize_rows(EmbeddingMatrix(
        ids=[f"r{i:08d}" for i in range(rows)],
        rows=rng.standard_normal((rows, dim)).astype(np.float32)))
    p = rng.standard_normal((probes, dim)).astype(np.float32)
    p /= np.linalg.norm(p, axis=1, keepdims=True)
    return matrix, p


def time_scan(matrix, probes, k: int, threads: int, repeats: int):
    best = float("inf")
    result = None
    for _ in range(repeats):
        start = time.perf_counter()
        result = nn_search.scan_top_k(matrix, probes, k, threads=threads)
        best = min(best, time.perf_counter() - start)
    return best, result


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--rows", type=int, default=200_000)
    parser.add_argument("--dim", type=int, default=256)
    parser.add_argument("--probes", type=int, default=32)
    parser.add_argument("--k", type=int, default=100)
    parser.add_argument("--threads", type=int, nargs="+", default=[1, 2, 8])
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    backends = ["numpy"]
    if _kernels.HAS_NUMBA:
        backends.insert(0, "numba")
    else:
        print("numba not importable; benchmarking the numpy backend only")

    matrix, probes = build_inputs(args.rows, args.dim, args.probes, args.seed)
    comparisons = args.rows * args.probes

    # One throwaway call per backend so JIT compilation stays out of the timings.
    for backend in backends:
        _kernels.set_backend(backend)
        nn_search.scan_top_k(matrix, probes[:1], 1)

    print(f"rows={args.rows}  dim={args.dim}  probes={args.probes}  k={args.k}  "
          f"best of {args.repeats}")
    print(f"{'backend':8s}  {'threads':>7s}  {'seconds':>9s}  {'Mcomp/s':>9s}")
    reference = None
    try:
        for backend in backends:
            _kernels.set_backend(backend)
            for threads in args.threads:
                elapsed, result = time_scan(matrix, probes, args.k, threads, args.repeats)
                print(f"{backend:8s}  {threads:7d}  {elapsed:9.3f}  "
                      f"{comparisons / elapsed / 1e6:9.1f}")
                if reference is None:
                    reference = result
                elif result != reference:
                    print(f"MISMATCH: {backend}/threads={threads} disagrees "
                          "with the first configuration")
                    return 1
    finally:
        _kernels.set_backend(None)
    print("all configurations returned identical neighbor lists")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
