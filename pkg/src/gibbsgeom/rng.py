"""Splittable seed derivation.

Every random stream in the package is keyed by a path of nonnegative
integers below a master seed, so replication ``i`` gets the same stream no
matter how many workers run or in which order.
"""
from __future__ import annotations

import numpy as np

SEED_MAX = 2**64 - 1


def zigzag(k: int) -> int:
    """Bijection from the integers onto the nonnegative integers."""
    k = int(k)
    return 2 * k if k >= 0 else -2 * k - 1


def derive_seed(master: int, *path: int) -> int:
    """A 64-bit seed for the stream named ``path`` under ``master``."""
    ss = np.random.SeedSequence(entropy=int(master), spawn_key=tuple(int(p) for p in path))
    lo, hi = ss.generate_state(2, dtype=np.uint32)
    return int(lo) | (int(hi) << 32)


def generator(master: int, *path: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(master), spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.PCG64(ss))
