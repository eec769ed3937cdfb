"""Deterministic random number generation.

One algorithm repo-wide: numpy's PCG64 behind ``np.random.Generator``. Equal
seeds give equal streams regardless of platform or thread count; worker
streams are derived as ``base_seed + index`` so parallel and serial dataset
generation produce identical results.
"""

from __future__ import annotations

import numpy as np


class Rng:
    """Seeded PCG64 stream."""

    def __init__(self, seed: int):
        if seed < 0 or seed >= 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, shape=None, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape)

    def normal(self, shape=None) -> np.ndarray:
        return self._gen.standard_normal(size=shape)

    def integers(self, low: int, high: int, shape=None) -> np.ndarray:
        return self._gen.integers(low, high, size=shape)

    def spawn(self, index: int) -> "Rng":
        """Independent per-run stream: seed = base seed + index (mod 2^64)."""
        return Rng((self.seed + index) % 2**64)

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, algorithm=PCG64)"
