"""Explicit seed derivation; nothing in the package touches a global RNG."""

import numpy as np

_MASK64 = (1 << 64) - 1


def splitmix64(value: int) -> int:
    z = (value + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(master_seed: int, index: int) -> int:
    """Sub-seed number `index` of `master_seed`: splitmix64((master + index) mod 2**64)."""
    if master_seed < 0 or index < 0:
        raise ValueError(f"seeds must be unsigned, got master={master_seed} index={index}")
    return splitmix64((int(master_seed) + int(index)) & _MASK64)


def derive_seeds(master_seed: int, count: int) -> list[int]:
    return [derive_seed(master_seed, i) for i in range(count)]


def make_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(int(seed))
