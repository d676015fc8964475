"""Seeded parameter initialisation.

Draws come from numpy's PCG64 bit generator (64-bit seed expanded through
``SeedSequence``).  Only the raw 64-bit output stream is used and converted to
doubles here, so values do not depend on numpy's distribution samplers and are
identical on every platform.
"""
from __future__ import annotations

import math

import numpy as np


class ParamRng:
    """Reproducible uniform stream for weight initialisation."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._bits = np.random.PCG64(np.random.SeedSequence(self.seed))

    def uniform(self, shape, low: float, high: float) -> np.ndarray:
        n = int(np.prod(shape)) if len(shape) else 1
        raw = self._bits.random_raw(n)
        unit = (raw >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)
        return (low + (high - low) * unit).reshape(shape)

    def he_uniform(self, shape, fan_in: int) -> np.ndarray:
        """U(-b, b) with b = sqrt(6 / fan_in), i.e. variance 2 / fan_in."""
        bound = math.sqrt(6.0 / fan_in)
        return self.uniform(shape, -bound, bound)

    def conv(self, c_out: int, c_in: int, k: int = 3) -> np.ndarray:
        return self.he_uniform((c_out, c_in, k, k), c_in * k * k)
