"""Seeded random streams.

All randomness goes through :class:`SeededRng`, a thin wrapper around
numpy's PCG64 bit generator. PCG64 and numpy's ziggurat normal sampler are
platform independent, so a seed fully determines every stream.
"""
from __future__ import annotations

import numpy as np


class SeededRng:
    """Deterministic random source bound to a 64-bit seed.

    Child streams are derived with :meth:`spawn`, which mixes the parent
    seed and an index through ``numpy.random.SeedSequence``; this is the
    documented ``record_seed = hash(base_seed, index)`` rule.
    """

    def __init__(self, seed: int):
        if not 0 <= int(seed) < 2**64:
            raise ValueError(f"seed must fit in 64 unsigned bits, got {seed}")
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def __repr__(self) -> str:
        return f"SeededRng(seed={self.seed})"

    def normal(self, shape, dtype=np.float64) -> np.ndarray:
        return self._gen.standard_normal(tuple(shape), dtype=dtype)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def random(self, size=None):
        return self._gen.random(size)

    @staticmethod
    def derive_seed(base_seed: int, index: int) -> int:
        seq = np.random.SeedSequence([int(base_seed), int(index)])
        return int(seq.generate_state(1, dtype=np.uint64)[0])

    def spawn(self, index: int) -> "SeededRng":
        return SeededRng(self.derive_seed(self.seed, index))
