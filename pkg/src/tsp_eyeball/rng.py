"""Deterministic random number generation.

Every random draw in this package flows through the two primitives below so
that datasets, mock responses, and perturbations reproduce bit-for-bit across
platforms and Python versions. The language's built-in RNG is deliberately
never used.

* ``splitmix64`` is the finalizer from Steele, Lea, and Flood's SplitMix
  generator (64-bit multiply-xorshift avalanche). ``derive_seed`` folds a
  master seed and integer context values through it, one step per value:
  ``h <- splitmix64((h + 0x9E3779B97F4A7C15 + value) mod 2^64)``.
* ``Pcg32`` is O'Neill's PCG-XSH-RR generator: 64-bit LCG state, 32-bit
  output. Seeding follows the reference ``pcg32_srandom``; the stream
  increment is ``(stream << 1) | 1``.

Bounded integers use rejection sampling, so they are unbiased for any span.
"""

from __future__ import annotations

import hashlib
from typing import MutableSequence

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_PCG_MULT = 6364136223846793005


def splitmix64(x: int) -> int:
    """One SplitMix64 finalizer pass over ``x`` (reduced mod 2^64)."""
    x &= MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def derive_seed(master: int, *context: int) -> int:
    """Child seed from a master seed plus integer context (size, index, ...).

    Order-sensitive: ``derive_seed(s, a, b) != derive_seed(s, b, a)`` in
    general. The derivation is documented in the module docstring so it can
    be reproduced outside this package.
    """
    h = master & MASK64
    for value in context:
        h = splitmix64((h + _GOLDEN + (value & MASK64)) & MASK64)
    return h


def seed_from_string(text: str) -> int:
    """Stable 64-bit seed for a string key (blake2b, 8-byte digest)."""
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


class Pcg32:
    """PCG-XSH-RR: 64-bit state LCG, 32-bit rotated xorshift output."""

    __slots__ = ("_state", "_inc")

    def __init__(self, seed: int, stream: int = 0) -> None:
        self._inc = (((stream & MASK64) << 1) | 1) & MASK64
        self._state = 0
        self._step()
        self._state = (self._state + (seed & MASK64)) & MASK64
        self._step()

    def _step(self) -> None:
        self._state = (self._state * _PCG_MULT + self._inc) & MASK64

    def next_u32(self) -> int:
        state = self._state
        self._step()
        xorshifted = (((state >> 18) ^ state) >> 27) & 0xFFFFFFFF
        rot = state >> 59
        return ((xorshifted >> rot) | (xorshifted << ((32 - rot) & 31))) & 0xFFFFFFFF

    def randint(self, lo: int, hi: int) -> int:
        """Uniform integer in the inclusive range [lo, hi], unbiased."""
        if hi < lo:
            raise ValueError(f"empty range [{lo}, {hi}]")
        span = hi - lo + 1
        if span > (1 << 32):
            raise ValueError("range wider than 32 bits")
        # rejection threshold = (2^32 - span) % span; draws below it would
        # over-represent the low residues
        threshold = ((1 << 32) - span) % span
        while True:
            r = self.next_u32()
            if r >= threshold:
                return lo + (r % span)

    def random(self) -> float:
        """Uniform float in [0, 1) with 32 bits of resolution."""
        return self.next_u32() / 4294967296.0

    def shuffle(self, items: MutableSequence) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(0, i)
            items[i], items[j] = items[j], items[i]

    def sample_indices(self, n: int, k: int) -> list[int]:
        """k distinct indices drawn from range(n), order randomized."""
        if not 0 <= k <= n:
            raise ValueError(f"cannot sample {k} from {n}")
        pool = list(range(n))
        self.shuffle(pool)
        return pool[:k]
