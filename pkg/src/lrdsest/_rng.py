"""Named, counter-based random streams.

Every random draw in the package comes from ``stream(seed, *path)``, where
``path`` mixes strings ("errors", "regressors") and integers (sample size,
replicate index).  Streams are Philox generators keyed by a SeedSequence, so
the value of a draw never depends on which thread produced it or in what order.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    value = int(part)
    if value < 0:
        raise ValueError("stream path integers must be nonnegative")
    return value


def stream(seed: int, *path) -> np.random.Generator:
    seed = int(seed)
    if seed < 0:
        raise ValueError("seed must be nonnegative")
    ss = np.random.SeedSequence(seed, spawn_key=tuple(_key(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *path) -> int:
    """A 63-bit integer seed for the child stream at ``path``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key(p) for p in path))
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))
