"""Deterministic random streams

Every random draw in the package comes from a generator derived from
``(seed, *purpose)``, so a training step can be replayed in isolation and a
resumed run sees exactly the draws an uninterrupted run would.
"""

import zlib
from typing import Union

import numpy as np

Key = Union[int, str]


def _word(part: Key) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    return int(part) & 0xFFFFFFFF


def derive_rng(seed: int, *purpose: Key) -> np.random.Generator:
    """Independent PCG64 stream for ``seed`` and a purpose path

    Args:
        seed: Run seed
        purpose: Labels and counters, e.g. ``("stage1", "mask", step)``

    Returns:
        A fresh generator; equal arguments give equal streams
    """
    entropy = [int(seed) & 0xFFFFFFFF, (int(seed) >> 32) & 0xFFFFFFFF]
    entropy.extend(_word(part) for part in purpose)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def derive_seed(seed: int, *purpose: Key) -> int:
    """Integer seed for APIs that take a seed instead of a generator"""
    return int(derive_rng(seed, *purpose).integers(0, 2**63 - 1))
