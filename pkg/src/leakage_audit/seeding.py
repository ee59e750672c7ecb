"""Deterministic seed derivation.

All randomness in the tool flows from one master seed. Stage- and
item-level generators get child seeds via a single splitting rule:

    child = little-endian uint64 of the first 8 bytes of
            SHA-256("{seed}/{label}[/{label}...]")

Labels are plain strings (stage names, query ids, grid coordinates), so any
(seed, label path) pair names the same generator on every platform and
thread count. Generators are numpy's default PCG64.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(seed: int, *labels: str) -> int:
    path = "/".join(str(label) for label in labels)
    digest = hashlib.sha256(f"{seed}/{path}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def derive_rng(seed: int, *labels: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *labels))
