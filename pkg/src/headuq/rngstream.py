"""Deterministic, collision-resistant RNG stream derivation.

Every stochastic operation in the package draws from a generator derived
from (seed, *labels) via SHA-256, so adding new runs or reordering
execution never perturbs the stream of an existing run.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(*parts: object) -> int:
    """Map an arbitrary tuple of labels to a stable 64-bit seed."""
    key = "/".join(repr(p) for p in parts).encode("utf-8")
    digest = hashlib.sha256(key).digest()
    return int.from_bytes(digest[:8], "little")


def derive_rng(*parts: object) -> np.random.Generator:
    """A fresh PCG64 generator for the stream named by ``parts``."""
    return np.random.default_rng(derive_seed(*parts))
