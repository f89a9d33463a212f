"""Seed plumbing.

Every stochastic component draws from a Philox (counter-based) bit generator
keyed by a tuple of integers, so parallel runs are reproducible regardless of
scheduling.
"""

from __future__ import annotations

import numpy as np

SeedLike = "int | np.random.Generator | None"


def derive_seed(*keys: int) -> int:
    """Collapse an integer key tuple into a single 63-bit seed."""
    ss = np.random.SeedSequence([int(k) & 0xFFFFFFFFFFFFFFFF for k in keys])
    return int(ss.generate_state(2, dtype=np.uint64)[0] >> np.uint64(1))


def make_rng(*keys: int) -> np.random.Generator:
    ss = np.random.SeedSequence([int(k) & 0xFFFFFFFFFFFFFFFF for k in keys])
    return np.random.Generator(np.random.Philox(ss))


def as_rng(seed) -> np.random.Generator:
    """Accept a Generator, an int seed, or None (fresh entropy)."""
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None:
        return np.random.Generator(np.random.Philox())
    return make_rng(int(seed))
