"""Seed handling.

Every stochastic operation in this package draws from a numpy PCG64 stream
(O'Neill's permuted congruential generator). PCG64 output is specified and
stable across numpy releases and platforms, so any result in this package
reproduces bit-for-bit given the same seed words.
"""

from __future__ import annotations

import numpy as np


def rng_from_seed(*seed_words: int) -> np.random.Generator:
    """Build a PCG64-backed generator from one or more integer seed words."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed_words)))
