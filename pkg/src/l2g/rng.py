"""Deterministic 64-bit random number generation.

Every random decision in this package flows through a named stream so that
datasets, crops, and parameter initializations are exactly reproducible from
a single integer seed. A stream is a xoshiro256** generator whose state is
seeded from splitmix64. Bulk per-pixel arrays (noise lattices, flip masks)
are produced in counter mode: one scalar draw from the stream keys a
vectorized splitmix64 hash over an index range, which keeps large arrays off
the scalar path without changing any other draw.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def mix64(x: int) -> int:
    """splitmix64 finalizer: a bijective scramble of a 64-bit integer."""
    z = (x + _GOLDEN) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def _fold(seed: int, key) -> int:
    if isinstance(key, str):
        h = 0xCBF29CE484222325
        for b in key.encode("utf-8"):
            h = ((h ^ b) * 0x100000001B3) & _MASK
        key = h
    return mix64((seed ^ mix64(key & _MASK)) & _MASK)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK


class Rng:
    """xoshiro256** stream, seeded through a splitmix64 walk."""

    __slots__ = ("_s0", "_s1", "_s2", "_s3")

    def __init__(self, seed: int):
        s = seed & _MASK
        state = []
        for _ in range(4):
            s = (s + _GOLDEN) & _MASK
            state.append(mix64(s))
        self._s0, self._s1, self._s2, self._s3 = state

    def u64(self) -> int:
        s0, s1, s2, s3 = self._s0, self._s1, self._s2, self._s3
        result = (_rotl((s1 * 5) & _MASK, 7) * 9) & _MASK
        t = (s1 << 17) & _MASK
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s0, self._s1, self._s2, self._s3 = s0, s1, s2, s3
        return result

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        """Uniform double in [lo, hi) using the top 53 bits."""
        u = (self.u64() >> 11) * (2.0 ** -53)
        return lo + (hi - lo) * u

    def randint(self, lo: int, hi: int) -> int:
        """Uniform integer in the inclusive range [lo, hi]."""
        if hi < lo:
            raise ValueError(f"empty range [{lo}, {hi}]")
        return lo + self.u64() % (hi - lo + 1)

    def choice(self, seq):
        return seq[self.randint(0, len(seq) - 1)]

    def shuffle(self, items: list) -> None:
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(0, i)
            items[i], items[j] = items[j], items[i]

    # -- bulk counter-mode draws ------------------------------------------

    def u64_array(self, n: int) -> np.ndarray:
        key = np.uint64(self.u64())
        idx = np.arange(1, n + 1, dtype=np.uint64)
        z = key + idx * np.uint64(_GOLDEN)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))

    def uniform_array(self, n: int, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        u = (self.u64_array(n) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
        return lo + (hi - lo) * u

    def bernoulli_mask(self, shape, p: float) -> np.ndarray:
        """Boolean array where each entry is True with probability p."""
        n = int(np.prod(shape))
        return (self.uniform_array(n) < p).reshape(shape)


def stream(seed: int, *keys) -> Rng:
    """Derive an independent named substream from (seed, keys).

    Keys may be integers or strings; the same tuple always yields the same
    stream and distinct tuples yield statistically independent ones.
    """
    h = seed & _MASK
    for k in keys:
        h = _fold(h, k)
    return Rng(h)
