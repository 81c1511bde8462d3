"""Seed derivation.

Every random stream in the package comes from ``numpy.random.SeedSequence``
keyed on a master seed plus integer coordinates (partition index, chain
index).  The CLI turns one ``--seed`` into per-module seeds by hashing a
fixed label, so adding a new stage never perturbs an existing one.
"""
from __future__ import annotations

import hashlib

import numpy as np

# Monte Carlo work is cut into partitions of this many replicates.  The
# partition layout depends only on the replicate count, never on the worker
# count, which is what makes results identical for any number of workers.
PARTITION_SIZE = 8192


def derive_seed(master: int, label: str) -> int:
    digest = hashlib.sha256(f"{int(master)}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def stream(seed: int, *coords: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, coords)]))


def partitions(total: int, size: int = PARTITION_SIZE) -> list[tuple[int, int]]:
    """Return ``(start, stop)`` bounds covering ``range(total)``."""
    return [(lo, min(lo + size, total)) for lo in range(0, total, size)]
