"""Seeded random stream used for initialization, shuffling and router noise."""

from __future__ import annotations

import numpy as np


class RngState:
    """A PCG64 stream plus a count of draws taken from it.

    Two instances built from the same seed produce bit-identical values for
    the same sequence of calls.
    """

    def __init__(self, seed: int):
        if not 0 <= int(seed) < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = int(seed)
        self.position = 0
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def normal(self, shape, std: float = 1.0) -> np.ndarray:
        out = self._gen.standard_normal(shape) * std
        self.position += out.size
        return out

    def permutation(self, n: int) -> np.ndarray:
        self.position += n
        return self._gen.permutation(n)

    def integers(self, low: int, high: int, size) -> np.ndarray:
        out = self._gen.integers(low, high, size=size)
        self.position += int(np.size(out))
        return out

    def spawn(self, salt: int) -> "RngState":
        """Independent child stream derived from this stream's seed."""
        return RngState((self.seed * 1_000_003 + salt) % 2**64)
