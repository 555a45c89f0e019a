"""Deterministic, named random streams derived from a single user seed.

Every source of randomness in the package draws from a stream addressed by
``(seed, label, *indices)``. Streams are independent of each other and of the
order in which they are created, so ensemble members can be generated
concurrently without changing results.
"""
from __future__ import annotations

import numpy as np

# Stream labels. Fixed small integers, never reused or renumbered: derived
# streams must stay stable across package versions.
PRIOR = 1
TRUTH = 2
NOISE = 3
ESMDA = 4
RESAMPLE = 5

SeedLike = "int | np.random.SeedSequence"


def sequence(seed, *key: int) -> np.random.SeedSequence:
    """SeedSequence for the (seed, key) stream.

    ``seed`` may be an int or an existing SeedSequence; in the latter case the
    key extends its spawn key.
    """
    if isinstance(seed, np.random.SeedSequence):
        if not key:
            return seed
        return np.random.SeedSequence(
            entropy=seed.entropy, spawn_key=tuple(seed.spawn_key) + tuple(key)
        )
    return np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(key))


def generator(seed, *key: int) -> np.random.Generator:
    """Generator seeded from the (seed, key) stream."""
    return np.random.default_rng(sequence(seed, *key))


def label_key(label: str) -> tuple[int, int]:
    """Stable two-int key for a string label (e.g. a well name)."""
    import hashlib

    digest = hashlib.blake2s(label.encode(), digest_size=8).digest()
    return (int.from_bytes(digest[:4], "little"),
            int.from_bytes(digest[4:], "little"))
