"""Portable seeded random streams.

Every stochastic component draws from an :class:`Xoshiro256` generator
obtained from :class:`RngStream`. The algorithms are fixed and documented in
``docs/formats.md`` so another implementation can reproduce the exact
sequences:

* child seed = ``mix64(mix64(mix64(master) ^ fnv1a64(name)) + GOLDEN * (index + 1))``
* the 256-bit xoshiro state is filled with four successive SplitMix64
  outputs started from the child seed;
* floats use the top 53 bits, normals use Box-Muller with the second
  variate cached.
"""

from __future__ import annotations

import math

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_TWO_PI = 2.0 * math.pi
_INV_2_53 = 1.0 / (1 << 53)


def mix64(z: int) -> int:
    """SplitMix64 finalizer."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a SplitMix64 state; returns ``(new_state, output)``."""
    state = (state + GOLDEN) & MASK64
    return state, mix64(state)


def fnv1a64(text: str) -> int:
    h = _FNV_OFFSET
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * _FNV_PRIME) & MASK64
    return h


def derive_seed(master: int, name: str, index: int = 0) -> int:
    h = mix64(mix64(master & MASK64) ^ fnv1a64(name))
    return mix64((h + GOLDEN * (index + 1)) & MASK64)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


class Xoshiro256:
    """xoshiro256** 1.0 with a small numpy-flavoured convenience API."""

    __slots__ = ("_s0", "_s1", "_s2", "_s3", "_spare")

    def __init__(self, seed: int):
        st = seed & MASK64
        words = []
        for _ in range(4):
            st, out = splitmix64(st)
            words.append(out)
        if not any(words):
            words[0] = 1
        self._s0, self._s1, self._s2, self._s3 = words
        self._spare: float | None = None

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s0, self._s1, self._s2, self._s3
        result = (_rotl((s1 * 5) & MASK64, 7) * 9) & MASK64
        t = (s1 << 17) & MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s0, self._s1, self._s2, self._s3 = s0, s1, s2, s3
        return result

    def get_state(self) -> tuple[int, int, int, int, float | None]:
        return (self._s0, self._s1, self._s2, self._s3, self._spare)

    def set_state(self, state: tuple[int, int, int, int, float | None]) -> None:
        self._s0, self._s1, self._s2, self._s3, self._spare = state

    # -- scalar draws ---------------------------------------------------

    def random(self) -> float:
        """Uniform float in [0, 1)."""
        return (self.next_u64() >> 11) * _INV_2_53

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None):
        if size is None:
            return low + (high - low) * self.random()
        n = int(np.prod(size))
        out = np.fromiter((self.random() for _ in range(n)), dtype=np.float64, count=n)
        return (low + (high - low) * out).reshape(size)

    def normal_scalar(self) -> float:
        if self._spare is not None:
            z, self._spare = self._spare, None
            return z
        u1 = 1.0 - self.random()
        u2 = self.random()
        r = math.sqrt(-2.0 * math.log(u1))
        self._spare = r * math.sin(_TWO_PI * u2)
        return r * math.cos(_TWO_PI * u2)

    def standard_normal(self, size=None):
        if size is None:
            return self.normal_scalar()
        if isinstance(size, tuple) and len(size) == 1:
            size = size[0]
        if isinstance(size, (int, np.integer)):
            return np.array([self.normal_scalar() for _ in range(size)])
        n = int(np.prod(size))
        return np.array([self.normal_scalar() for _ in range(n)]).reshape(size)

    def integer(self, n: int) -> int:
        """Unbiased integer in [0, n) by rejection sampling."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def integers(self, n: int, size=None):
        if size is None:
            return self.integer(n)
        count = int(np.prod(size))
        return np.fromiter((self.integer(n) for _ in range(count)), dtype=np.int64, count=count).reshape(size)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of ``range(n)``."""
        perm = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.integer(i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return np.asarray(perm, dtype=np.int64)

    def categorical(self, probs) -> int:
        u = self.random()
        acc = 0.0
        last = len(probs) - 1
        for i, p in enumerate(probs):
            acc += float(p)
            if u < acc:
                return i
        return last


class RngStream:
    """Named child streams derived from one master seed."""

    def __init__(self, master_seed: int):
        if master_seed < 0:
            raise ValueError("seed must be a non-negative integer")
        self.master_seed = int(master_seed)

    def seed_for(self, name: str, index: int = 0) -> int:
        return derive_seed(self.master_seed, name, index)

    def derive(self, name: str, index: int = 0) -> Xoshiro256:
        return Xoshiro256(self.seed_for(name, index))

    def child(self, name: str, index: int = 0) -> "RngStream":
        """A nested stream, so sub-components can derive their own names."""
        return RngStream(self.seed_for(name, index))


def derive_stream(rng: RngStream, name: str, index: int = 0) -> Xoshiro256:
    return rng.derive(name, index)


def as_generator(seed_or_rng) -> Xoshiro256:
    """Accept an int seed or an existing generator."""
    if isinstance(seed_or_rng, Xoshiro256):
        return seed_or_rng
    if isinstance(seed_or_rng, RngStream):
        return seed_or_rng.derive("default")
    return Xoshiro256(int(seed_or_rng))
