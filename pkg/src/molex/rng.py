"""Seeded counter-based random streams.

Every stochastic choice in the package (weight init, corpus synthesis,
batch sampling, augmentation) draws from a stream derived from a base seed
plus a tuple of string/int tags. Streams are independent Philox counters,
so results never depend on call order, thread count, or how many draws
another stream consumed.
"""

import hashlib

import numpy as np


def derive_key(seed: int, *tags) -> int:
    """Stable 128-bit key from a base seed and a tag path.

    Uses blake2b rather than hash() so keys survive interpreter restarts.
    """
    h = hashlib.blake2b(digest_size=16)
    h.update(str(int(seed)).encode())
    for tag in tags:
        h.update(b"/")
        h.update(str(tag).encode())
    return int.from_bytes(h.digest(), "little")


def stream(seed: int, *tags) -> np.random.Generator:
    """Counter-based generator for the (seed, *tags) stream."""
    return np.random.Generator(np.random.Philox(key=derive_key(seed, *tags)))


def gaussian(seed: int, shape, scale: float = 1.0, *tags) -> np.ndarray:
    """Seeded Gaussian(0, scale^2) array for the given stream."""
    return stream(seed, *tags).normal(0.0, scale, size=shape)


def uniform(seed: int, shape, low: float = 0.0, high: float = 1.0, *tags) -> np.ndarray:
    """Seeded uniform[low, high) array for the given stream."""
    return stream(seed, *tags).uniform(low, high, size=shape)
