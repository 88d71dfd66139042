"""Deterministic, splittable random number generation.

Every random choice in the library flows from one integer seed. Independent
streams are derived by spawning a numpy ``SeedSequence`` keyed on a
``(purpose, index)`` pair, so samplers running in parallel (or in a different
order) still produce identical results. The purpose string is hashed with
CRC-32; the generator is PCG64, whose output is stable across platforms and
numpy versions.
"""

from __future__ import annotations

import zlib

import numpy as np


def derive_rng(seed: int, purpose: str, index: int = 0) -> np.random.Generator:
    """Return a generator for the independent stream (seed, purpose, index)."""
    key = zlib.crc32(purpose.encode("utf-8"))
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(key, int(index)))
    return np.random.Generator(np.random.PCG64(ss))
