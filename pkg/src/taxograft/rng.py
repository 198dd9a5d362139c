"""Deterministic, splittable random streams.

Every source of randomness in the package is a Philox counter-based
generator derived from one run seed plus a key path, e.g.
``seed_stream(seed, "negatives", epoch)``.  Streams with distinct key paths
are statistically independent, and the same (seed, key path) always yields
the same sequence, which is what makes training logs and split files
byte-reproducible.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key_part(part: int | str) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    return int(part)


def seed_stream(seed: int, *key: int | str) -> np.random.Generator:
    """Child generator uniquely determined by ``seed`` and the key path."""
    spawn = tuple(_key_part(p) for p in key)
    seq = np.random.SeedSequence(int(seed), spawn_key=spawn)
    return np.random.Generator(np.random.Philox(seq))
