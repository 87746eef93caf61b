"""Seed expansion so every random component gets its own independent stream."""

import numpy as np

_MASK = 0xFFFFFFFFFFFFFFFF
_GOLDEN = 0x9E3779B97F4A7C15

# Stream ids are append-only: adding a new component must not shift these.
DATA_CENTERS = 0
DATA_NOISE = 1
QUERY_NOISE = 2
INIT_PARAMS = 3
INIT_CODES = 4
OMEGA = 5
BATCHES = 6


def splitmix64(x: int) -> int:
    x = (x + _GOLDEN) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def derive_seed(seed: int, stream: int) -> int:
    """Sub-seed for ``stream`` derived from the root ``seed``."""
    return splitmix64((seed & _MASK) ^ splitmix64(stream))


def rng_for(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, stream))
