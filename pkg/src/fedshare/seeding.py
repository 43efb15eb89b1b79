"""Deterministic seed derivation.

Every random decision in a simulation is keyed by a tuple such as
(master_seed, "train", participant, round). Seeds are a pure function of the
key, so runs replay identically regardless of execution order, and distinct
keys get independent streams.
"""
from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["derive_seed", "derive_rng"]


def derive_seed(*parts: int | str) -> int:
    """Hash a key tuple into a 64-bit seed (stable across runs and platforms)."""
    h = hashlib.sha256()
    for part in parts:
        h.update(str(part).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest()[:8], "little")


def derive_rng(*parts: int | str) -> np.random.Generator:
    """A fresh numpy generator seeded from the key tuple."""
    return np.random.default_rng(derive_seed(*parts))
