"""Deterministic randomness.

Every stochastic operation in the package takes an explicit integer seed
and builds a counter-based Philox generator from it, so runs are
bit-reproducible across processes. Sub-seeds are derived by hashing
(seed, purpose-string) with BLAKE2b; Python's built-in hash() is
process-salted and must not be used here.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(seed: int, purpose: str) -> int:
    """Derive a 64-bit sub-seed from a base seed and a purpose label."""
    digest = hashlib.blake2b(f"{seed}:{purpose}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def generator(seed: int) -> np.random.Generator:
    """A Philox-backed generator for the given 64-bit seed."""
    return np.random.Generator(np.random.Philox(key=seed & 0xFFFFFFFFFFFFFFFF))
