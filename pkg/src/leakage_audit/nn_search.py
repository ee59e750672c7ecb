"""Exact top-k and above-threshold cosine search over an embedding matrix.

Cosine similarity is realized as a float64 dot product of unit-normalized
float32 rows. The scan walks the matrix in fixed-size row blocks (so
memory stays bounded and memory-mapped matrices stream from disk), selects
per-block candidates, and merges them under the canonical total order
(similarity descending, row id ascending in UTF-8 byte order).

Exactness and determinism come from the structure, not from tuning: every
row's score is accumulated in one canonical order by the active kernel
backend, ties are broken by a precomputed numeric id rank, and the merge is
associative, so results are identical for any block size or worker count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from ._kernels import block_scores
from .errors import ValidationError
from .types import EmbeddingMatrix, Neighbor

DEFAULT_BLOCK_ROWS = 65536

NORM_TOLERANCE = 1e-5


def normalize_rows(matrix: EmbeddingMatrix) -> EmbeddingMatrix:
    """Return a copy of the matrix with every row scaled to unit L2 norm.

    Norms are computed in float64 and the result is cast back to float32,
    which keeps every row norm within 1e-5 of 1.0. Zero-norm rows cannot be
    normalized and raise ValidationError naming the row id.
    """
    rows = np.asarray(matrix.rows, dtype=np.float32)
    norms = np.sqrt(np.add.reduce(rows.astype(np.float64) ** 2, axis=1))
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise ValidationError(f"cannot normalize zero-norm row {matrix.ids[int(zero[0])]!r}")
    normalized = (rows.astype(np.float64) / norms[:, None]).astype(np.float32)
    return EmbeddingMatrix(ids=list(matrix.ids), rows=normalized)


def _check_probes(matrix: EmbeddingMatrix, probes: np.ndarray) -> np.ndarray:
    probes = np.asarray(probes, dtype=np.float32)
    if probes.ndim == 1:
        probes = probes[None, :]
    if probes.ndim != 2 or probes.shape[1] != matrix.dim:
        raise ValidationError(
            f"probe dimension {probes.shape[-1]} does not match matrix dimension {matrix.dim}"
        )
    return np.ascontiguousarray(probes)


def _block_starts(n: int, block_rows: int) -> list[int]:
    return list(range(0, n, block_rows))


def _scan_blocks(matrix, probes, threads, block_rows):
    """Yield (start, scores) per block, in block order, regardless of threads."""
    n = len(matrix)
    starts = _block_starts(n, block_rows)

    def work(start):
        block = np.ascontiguousarray(matrix.rows[start:start + block_rows], dtype=np.float32)
        return block_scores(block, probes)

    if threads <= 1 or len(starts) <= 1:
        for start in starts:
            yield start, work(start)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for start, scores in zip(starts, pool.map(work, starts)):
                yield start, scores


def _select_block_topk(scores: np.ndarray, ranks: np.ndarray, k: int):
    """Indices of the block's top-k under (score desc, id rank asc).

    Ties at the k-th score are resolved exactly: every row at the boundary
    score is kept for the lexsort, then the order is truncated to k.
    """
    n = scores.shape[0]
    if n > k:
        kth = np.partition(scores, n - k)[n - k]
        cand = np.flatnonzero(scores >= kth)
    else:
        cand = np.arange(n)
    order = np.lexsort((ranks[cand], -scores[cand]))[:k]
    return cand[order]


def scan_top_k(matrix: EmbeddingMatrix, probes: np.ndarray, k: int, *,
               threads: int = 1, block_rows: int = DEFAULT_BLOCK_ROWS) -> list[list[Neighbor]]:
    """Exact top-k for a batch of probes; one canonical neighbor list each."""
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    probes = _check_probes(matrix, probes)
    id_ranks = matrix.id_ranks()
    m = probes.shape[0]

    # Per probe: candidate global indices and scores, merged across blocks.
    cand_idx: list[list[np.ndarray]] = [[] for _ in range(m)]
    cand_scores: list[list[np.ndarray]] = [[] for _ in range(m)]
    for start, scores in _scan_blocks(matrix, probes, threads, block_rows):
        block_ranks = id_ranks[start:start + scores.shape[0]]
        for p in range(m):
            sel = _select_block_topk(scores[:, p], block_ranks, k)
            cand_idx[p].append(sel + start)
            cand_scores[p].append(scores[sel, p])

    results = []
    for p in range(m):
        idx = np.concatenate(cand_idx[p])
        sc = np.concatenate(cand_scores[p])
        order = np.lexsort((id_ranks[idx], -sc))[:k]
        results.append([
            Neighbor(query_row_id=matrix.ids[int(idx[j])], similarity=float(sc[j]), rank=r)
            for r, j in enumerate(order, start=1)
        ])
    return results


def scan_above_threshold(matrix: EmbeddingMatrix, probes: np.ndarray, theta: float, *,
                         threads: int = 1, block_rows: int = DEFAULT_BLOCK_ROWS) -> list[list[Neighbor]]:
    """All rows with similarity strictly above theta, canonically ordered."""
    probes = _check_probes(matrix, probes)
    id_ranks = matrix.id_ranks()
    m = probes.shape[0]

    cand_idx: list[list[np.ndarray]] = [[] for _ in range(m)]
    cand_scores: list[list[np.ndarray]] = [[] for _ in range(m)]
    for start, scores in _scan_blocks(matrix, probes, threads, block_rows):
        for p in range(m):
            sel = np.flatnonzero(scores[:, p] > theta)
            cand_idx[p].append(sel + start)
            cand_scores[p].append(scores[sel, p])

    results = []
    for p in range(m):
        idx = np.concatenate(cand_idx[p])
        sc = np.concatenate(cand_scores[p])
        order = np.lexsort((id_ranks[idx], -sc))
        results.append([
            Neighbor(query_row_id=matrix.ids[int(idx[j])], similarity=float(sc[j]), rank=r)
            for r, j in enumerate(order, start=1)
        ])
    return results


def top_k(matrix: EmbeddingMatrix, probe: np.ndarray, k: int, *,
          threads: int = 1, block_rows: int = DEFAULT_BLOCK_ROWS) -> list[Neighbor]:
    """Exact top-k neighbors of a single unit-normalized probe."""
    return scan_top_k(matrix, probe, k, threads=threads, block_rows=block_rows)[0]


def above_threshold(matrix: EmbeddingMatrix, probe: np.ndarray, theta: float, *,
                    threads: int = 1, block_rows: int = DEFAULT_BLOCK_ROWS) -> list[Neighbor]:
    """All and only rows with similarity > theta for a single probe."""
    return scan_above_threshold(matrix, probe, theta, threads=threads, block_rows=block_rows)[0]
