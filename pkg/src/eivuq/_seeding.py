"""Seed derivation helpers shared by every stochastic component."""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(value: int) -> int:
    """One splitmix64 finalisation step on a 64-bit integer."""
    z = (value + _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, *keys: int) -> int:
    """Derive a child seed from ``seed`` and an integer path.

    The result depends only on the arguments, never on call order, which is
    what keeps parallel member training reproducible.
    """
    out = int(seed) & _MASK64
    for key in keys:
        out = splitmix64(out ^ splitmix64(int(key) & _MASK64))
    return out


def hash_vector(x: np.ndarray) -> int:
    """Stable 64-bit digest of a float vector's float64 byte representation."""
    buf = np.ascontiguousarray(np.asarray(x, dtype=np.float64)).tobytes()
    return int.from_bytes(hashlib.blake2b(buf, digest_size=8).digest(), "little")
