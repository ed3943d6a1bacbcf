"""Named, reproducible random substreams derived from a single integer seed."""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["substream"]


def substream(seed: int, name: str) -> np.random.Generator:
    """Return a PCG64 generator for ``(seed, name)``.

    The stream key is the CRC-32 of the UTF-8 name, so streams for different
    purposes (placement, permutation, noise) are independent and stable across
    runs and platforms.
    """
    if int(seed) != seed or seed < 0:
        raise ValueError(f"seed must be a non-negative integer, got {seed!r}")
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(key,))))
