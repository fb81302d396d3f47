"""Block-buffered scalar random draws.

Drawing scalars one at a time from a ``numpy.random.Generator`` costs about a
microsecond each, which dominates a thinning loop whose other work is a few
floating point operations. Draws are taken in blocks instead; the sequence is
still a deterministic function of the generator state.
"""

from __future__ import annotations

import numpy as np

_BLOCK = 4096


class RandomStream:
    """Buffered ``Exp(1)``, ``U(0, 1)`` and uniform-index draws from one generator."""

    def __init__(self, rng: np.random.Generator, block: int = _BLOCK):
        self.rng = rng
        self.block = block
        self._exp = []
        self._unif = []
        self._idx = []
        self._idx_n = None

    def exp(self) -> float:
        if not self._exp:
            self._exp = self.rng.standard_exponential(self.block).tolist()[::-1]
        return self._exp.pop()

    def unif(self) -> float:
        if not self._unif:
            self._unif = self.rng.random(self.block).tolist()[::-1]
        return self._unif.pop()

    def index(self, n: int) -> int:
        """Uniform integer in ``[0, n)``; ``n`` must stay fixed for a stream."""
        if not self._idx:
            if self._idx_n is not None and self._idx_n != n:
                raise ValueError("index range changed within a stream")
            self._idx_n = n
            self._idx = self.rng.integers(n, size=self.block).tolist()[::-1]
        return self._idx.pop()
