"""Deterministic RNG streams keyed by (seed, purpose, index).

Every random draw in the package goes through a stream from here, so that
parallelism over graphs / sweep cells never changes output and any run can
be replayed from its manifest.
"""

from __future__ import annotations

import zlib

import numpy as np


def stream(seed: int, purpose: str, index: int = 0) -> np.random.Generator:
    """Independent generator for (seed, purpose, index).

    Streams with different keys are statistically independent; the same key
    always yields the same sequence.
    """
    tag = zlib.crc32(purpose.encode("utf-8"))
    ss = np.random.SeedSequence(entropy=int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=(tag, int(index)))
    return np.random.Generator(np.random.PCG64(ss))
