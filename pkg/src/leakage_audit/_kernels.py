"""Similarity kernels: numba-compiled hot loops with a pure-numpy fallback.

The only hot loop in the package is the block-wise dot-product scan behind
the exact nearest-neighbor search. Both backends compute, for a block of
float32 rows and a batch of float32 probes, the float64 score matrix
(rows x probes):

- "numba": per (row, probe) a sequential float64 accumulation over the
  dimensions. Accumulation order is fixed by the code, so results are
  bit-identical for any block size or thread count.
- "numpy": float64 GEMM per block. Per-element accumulation over the
  (small) dimension axis does not depend on how rows are blocked.

Backend selection: LEAKAGE_AUDIT_PURE_NUMPY=1 forces the numpy path;
otherwise numba is used when importable. Both paths agree to ~1e-15 in
the scores; canonical ordering is applied outside the kernels.
"""

from __future__ import annotations

import os

import numpy as np

_ENV_FLAG = "LEAKAGE_AUDIT_PURE_NUMPY"

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dep, but stay usable
    numba = None
    HAS_NUMBA = False


def _numpy_block_scores(block: np.ndarray, probes: np.ndarray) -> np.ndarray:
    return block.astype(np.float64) @ probes.astype(np.float64).T


if HAS_NUMBA:

    @numba.njit(cache=True, nogil=True)
    def _numba_block_scores(block, probes):  # pragma: no cover - compiled
        n, d = block.shape
        m = probes.shape[0]
        out = np.empty((n, m), dtype=np.float64)
        for r in range(n):
            for p in range(m):
                acc = 0.0
                for i in range(d):
                    acc += np.float64(block[r, i]) * np.float64(probes[p, i])
                out[r, p] = acc
        return out

else:  # pragma: no cover
    _numba_block_scores = None


_FORCED: str | None = None


def active_backend() -> str:
    """Name of the backend the next scan will use: "numba" or "numpy"."""
    if _FORCED is not None:
        return _FORCED
    if os.environ.get(_ENV_FLAG, "").lower() in ("1", "true", "yes"):
        return "numpy"
    return "numba" if HAS_NUMBA else "numpy"


def set_backend(name: str | None) -> None:
    """Force a backend ("numba"/"numpy") or restore env-based selection (None)."""
    global _FORCED
    if name not in (None, "numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAS_NUMBA:
        raise ValueError("numba backend requested but numba is not importable")
    _FORCED = name


def block_scores(block: np.ndarray, probes: np.ndarray) -> np.ndarray:
    """Float64 dot products of a float32 row block against float32 probes."""
    if active_backend() == "numba":
        return _numba_block_scores(block, probes)
    return _numpy_block_scores(block, probes)
