"""Seed derivation so that per-pair and per-hypothesis streams never overlap."""

import numpy as np


def derive_seed(seed: int, *keys: int) -> int:
    """Derive a 63-bit child seed from ``seed`` and integer keys (e.g. a pair id)."""
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(sequence.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    """Generator for the stream identified by ``keys`` under ``seed``."""
    return np.random.default_rng(
        np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    )
