"""Deterministic random primitives for reproducible runs.

All package randomness flows from one 64-bit root seed.  Stage seeds are
forked from the root with a label so that adding a stage never shifts the
streams of the others.  The permutation generator is pinned to a concrete
algorithm (splitmix64 seeding a xoshiro256** stream driving a
Fisher-Yates shuffle) so that an embedding plan can be rebuilt bit-for-bit
from the recorded seed by any implementation.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def splitmix64_next(state: int) -> tuple[int, int]:
    """One splitmix64 step: returns (new_state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, (z ^ (z >> 31)) & _MASK64


def fork_seed(root_seed: int, label: str) -> int:
    """Derive a labeled 64-bit child seed from a root seed.

    Uses SHA-256 over the root seed bytes and the label, so streams for
    distinct labels are independent and stable across runs.
    """
    h = hashlib.sha256()
    h.update(int(root_seed & _MASK64).to_bytes(8, "big"))
    h.update(label.encode("utf-8"))
    return int.from_bytes(h.digest()[:8], "big")


class Xoshiro256StarStar:
    """xoshiro256** generator with splitmix64 state initialization."""

    def __init__(self, seed: int):
        self.s = []
        state = seed & _MASK64
        for _ in range(4):
            state, out = splitmix64_next(state)
            self.s.append(out)

    @staticmethod
    def _rotl(x: int, k: int) -> int:
        return ((x << k) | (x >> (64 - k))) & _MASK64

    def next_uint64(self) -> int:
        s0, s1, s2, s3 = self.s
        result = (self._rotl((s1 * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = self._rotl(s3, 45)
        self.s = [s0, s1, s2, s3]
        return result

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates permutation of range(n).

        Index draws use ``next_uint64() % (i + 1)``; the modulo bias is
        negligible for any feasible slot count and keeps the algorithm
        trivially portable.
        """
        perm = np.arange(n, dtype=np.int64)
        for i in range(n - 1, 0, -1):
            j = self.next_uint64() % (i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return perm


def uniform_noise_seed(base_seed: int, image_index: int) -> int:
    """Per-image noise seed that does not depend on batch order."""
    return fork_seed(base_seed, f"noise/{image_index}")
