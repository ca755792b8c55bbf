"""Named seed derivation.

Every random stream in the package is derived from one integer seed plus a
component name and optional indices, so results do not depend on call order
or on how work is split across processes.
"""
from __future__ import annotations

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _name_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def seed_sequence(seed: int, name: str, *index: int) -> np.random.SeedSequence:
    entropy = [int(seed) & _MASK64, _name_key(name), *(int(i) & _MASK64 for i in index)]
    return np.random.SeedSequence(entropy)


def derive_rng(seed: int, name: str, *index: int) -> np.random.Generator:
    """Generator for the stream ``(seed, name, *index)``."""
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, name, *index)))


def derive_seed(seed: int, name: str, *index: int) -> int:
    """A 63-bit child seed, handy for storing in configs and sidecars."""
    return int(seed_sequence(seed, name, *index).generate_state(1, np.uint64)[0] >> np.uint64(1))
