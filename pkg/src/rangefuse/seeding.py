"""Deterministic RNG stream splitting.

Every random draw in the package flows from one root seed. Subsystems get
independent streams by hashing the root seed together with a string label
(e.g. "uwb-noise", "mask:2", "init:gat.l0.att"). SHA-256 keeps the split
stable across platforms and Python versions.
"""

from __future__ import annotations

import hashlib

import numpy as np


def child_seed(root_seed: int, label: str) -> int:
    """Derive a 64-bit child seed from a root seed and a stream label."""
    digest = hashlib.sha256(f"{root_seed}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def child_rng(root_seed: int, label: str) -> np.random.Generator:
    """A PCG64 generator seeded from (root_seed, label)."""
    return np.random.default_rng(child_seed(root_seed, label))
