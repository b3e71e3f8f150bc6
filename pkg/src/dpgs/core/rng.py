"""Seed derivation so every subroutine gets its own reproducible stream."""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(seed, *names) -> int:
    """Hash ``(seed, *names)`` into a 64-bit seed."""
    key = "\x1f".join([str(int(seed))] + [str(n) for n in names])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def derive_rng(seed, *names) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *names))


def as_seed(rng) -> int:
    """Accept an int seed or a Generator and return an int root seed."""
    if isinstance(rng, np.random.Generator):
        return int(rng.integers(0, 2**63 - 1))
    if rng is None:
        raise ValueError("a seed or Generator is required")
    return int(rng)


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(int(rng))
