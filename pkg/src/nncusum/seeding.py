"""Order-free seed derivation.

Every random stream in an experiment is a ``SeedSequence`` whose spawn key is
built from labels (detector name, example name, purpose, replication index).
Adding, removing or reordering experiment cells therefore never changes the
numbers of any other cell.
"""

from __future__ import annotations

import zlib

import numpy as np

PURPOSES = ("calibration", "evaluation", "reference", "drift")


def _key(label) -> int:
    if isinstance(label, (int, np.integer)):
        if label < 0:
            raise ValueError("integer seed labels must be nonnegative")
        return int(label)
    return zlib.crc32(str(label).encode("utf-8"))


def as_seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def derive_seed(base, *labels) -> np.random.SeedSequence:
    """Child of ``base`` addressed by ``labels`` (strings or nonnegative ints)."""
    base = as_seed_sequence(base)
    key = tuple(base.spawn_key) + tuple(_key(label) for label in labels)
    return np.random.SeedSequence(base.entropy, spawn_key=key, pool_size=base.pool_size)


def child_seeds(base, n: int, start: int = 0) -> list[np.random.SeedSequence]:
    """Replication seeds ``start .. start + n - 1``; the i-th does not depend on ``n``."""
    return [derive_seed(base, i) for i in range(start, start + n)]
