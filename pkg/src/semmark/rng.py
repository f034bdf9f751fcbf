"""Deterministic seeding utilities.

All randomness in the package flows through 64-bit splitmix-style mixing so
that a single global seed reproduces every artifact bit-for-bit across
platforms. Bulk Gaussian draws use numpy's PCG64 seeded from derived seeds.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state once; returns (new_state, output)."""
    state = (state + _GOLDEN) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return state, z ^ (z >> 31)


class SplitMix64:
    """Tiny deterministic PRNG; used where an explicit portable stream matters."""

    def __init__(self, seed: int):
        self.state = seed & _MASK

    def next_u64(self) -> int:
        self.state, out = splitmix64(self.state)
        return out

    def next_float(self) -> float:
        # 53 random mantissa bits -> uniform in [0, 1)
        return (self.next_u64() >> 11) / float(1 << 53)

    def next_below(self, n: int) -> int:
        return self.next_u64() % n


def hash_bytes(data: bytes, seed: int = 0) -> int:
    """Stable 64-bit hash of a byte string (FNV-1a core, splitmix finalizer)."""
    h = (0xCBF29CE484222325 ^ (seed & _MASK)) & _MASK
    for b in data:
        h = ((h ^ b) * 0x100000001B3) & _MASK
    _, out = splitmix64(h)
    return out


def hash_text(text: str, seed: int = 0) -> int:
    return hash_bytes(text.encode("utf-8"), seed)


def derive_seed(seed: int, label: str) -> int:
    """Fan a global seed out to a per-stage seed, mixing in a stage label."""
    return hash_bytes(label.encode("utf-8"), seed)


def generator(seed: int, label: str | None = None) -> np.random.Generator:
    """numpy Generator seeded from (seed, label); deterministic across platforms."""
    if label is not None:
        seed = derive_seed(seed, label)
    return np.random.Generator(np.random.PCG64(seed))
