"""EMB1 binary matrix writer.

Layout: 4-byte magic "EMB1", u32 little-endian dimension, u64 little-endian
row count, then count*dim float32 values little-endian in row-major order.
The companion ids file holds one row id per line, UTF-8, in matrix order.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import FormatError

MAGIC = b"EMB1"
HEADER = struct.Struct("<4sIQ")


class Emb1Writer:
    """Streams batches to disk in input order; single-threaded append."""

    def __init__(self, matrix_path: str | Path, ids_path: str | Path,
                 dim: int, count: int):
        self.dim = dim
        self.count = count
        self._written = 0
        self._matrix = open(matrix_path, "wb")
        self._matrix.write(HEADER.pack(MAGIC, dim, count))
        self._ids = open(ids_path, "w", encoding="utf-8")

    def append(self, ids: Iterable[str], rows: np.ndarray) -> None:
        rows = np.ascontiguousarray(rows, dtype="<f4")
        ids = list(ids)
        if rows.ndim != 2 or rows.shape[1] != self.dim:
            raise FormatError(f"batch shape {rows.shape} does not match dimension {self.dim}")
        if len(ids) != rows.shape[0]:
            raise FormatError(f"{len(ids)} ids for {rows.shape[0]} rows")
        for row_id in ids:
            if "\n" in row_id or "\r" in row_id:
                raise FormatError(f"row id {row_id!r} contains a newline")
            self._ids.write(row_id + "\n")
        self._matrix.write(rows.tobytes(order="C"))
        self._written += rows.shape[0]

    def close(self) -> None:
        try:
            if self._written != self.count:
                raise FormatError(
                    f"wrote {self._written} rows, header promised {self.count}")
        finally:
            self._matrix.close()
            self._ids.close()

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            self.close()
        else:
            self._matrix.close()
            self._ids.close()
