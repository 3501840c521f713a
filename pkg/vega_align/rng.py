"""
vega-align - Random number generation

xoshiro256** seeded through splitmix64. Every random draw in the
package (parameter init, scene layout, batch sampling, k-means seeding)
goes through this generator so datasets and runs reproduce bit-exactly
from the documented seeds, independent of numpy's own bit generators.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np

MASK64 = (1 << 64) - 1
_TWO_PI = 2.0 * math.pi


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state. Returns (new_state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


def derive_seed(seed: int, *tags: object) -> int:
    """Derive an independent 64-bit seed for a named sub-stream."""
    payload = "|".join([str(int(seed))] + [str(t) for t in tags]).encode()
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "little")


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


class Xoshiro256:
    """xoshiro256** generator with a handful of numpy-returning helpers."""

    __slots__ = ("_s",)

    def __init__(self, seed: int) -> None:
        state = int(seed) & MASK64
        words = []
        for _ in range(4):
            state, out = splitmix64(state)
            words.append(out)
        self._s = words

    @classmethod
    def from_state(cls, words: tuple[int, ...] | list[int]) -> Xoshiro256:
        if len(words) != 4:
            raise ValueError(f"xoshiro256 state needs 4 words, got {len(words)}")
        gen = cls.__new__(cls)
        gen._s = [int(w) & MASK64 for w in words]
        return gen

    @property
    def state(self) -> tuple[int, int, int, int]:
        return tuple(self._s)  # type: ignore[return-value]

    def next_u64(self) -> int:
        s = self._s
        result = (_rotl((s[1] * 5) & MASK64, 7) * 9) & MASK64
        t = (s[1] << 17) & MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def random(self) -> float:
        """Uniform double in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def integers(self, low: int, high: int) -> int:
        """Uniform integer in [low, high), unbiased by rejection."""
        span = high - low
        if span <= 0:
            raise ValueError(f"empty integer range [{low}, {high})")
        limit = (1 << 64) - ((1 << 64) % span)
        while True:
            x = self.next_u64()
            if x < limit:
                return low + x % span

    def uniform(self, low: float, high: float, size: int | tuple[int, ...]) -> np.ndarray:
        shape = (size,) if isinstance(size, int) else tuple(size)
        n = math.prod(shape)
        draws = [self.random() for _ in range(n)]
        return (low + (high - low) * np.asarray(draws, dtype=np.float64)).reshape(shape)

    def normal(self, size: int | tuple[int, ...], scale: float = 1.0) -> np.ndarray:
        """Standard normals by Box-Muller, one pair per two uniforms."""
        shape = (size,) if isinstance(size, int) else tuple(size)
        n = math.prod(shape)
        out = np.empty(n + (n % 2), dtype=np.float64)
        for i in range(0, n, 2):
            u1 = 1.0 - self.random()  # (0, 1]
            u2 = self.random()
            r = math.sqrt(-2.0 * math.log(u1))
            out[i] = r * math.cos(_TWO_PI * u2)
            out[i + 1] = r * math.sin(_TWO_PI * u2)
        return (scale * out[:n]).reshape(shape)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of range(n)."""
        items = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.integers(0, i + 1)
            items[i], items[j] = items[j], items[i]
        return np.asarray(items, dtype=np.int64)
