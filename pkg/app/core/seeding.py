from __future__ import annotations

import numpy as np


def seed_sequence(seed: int, *keys: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), *(int(k) for k in keys)])


def spawn_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent stream for (seed, *keys); identical keys give identical streams."""
    return np.random.default_rng(seed_sequence(seed, *keys))


def derive_seed(seed: int, *keys: int) -> int:
    """Plain 63-bit integer derived from (seed, *keys)."""
    hi, lo = seed_sequence(seed, *keys).generate_state(2, dtype=np.uint32)
    return ((int(hi) << 32) | int(lo)) & ((1 << 63) - 1)
