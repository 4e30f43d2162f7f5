"""Named random streams derived from a single integer seed.

Every stochastic step in the pipeline draws from a stream keyed by
(root seed, purpose strings/ints). Streams are independent of call order
and of each other, so a manifest only needs to record the root seed and
the (fixed) key scheme to make every stage replayable.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _key_to_int(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    digest = hashlib.sha256(str(part).encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "big")


def seed_sequence(seed: int, *key) -> np.random.SeedSequence:
    """SeedSequence for (seed, *key); stable across runs and platforms."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [_key_to_int(k) for k in key]
    return np.random.SeedSequence(entropy)


def generator(seed: int, *key) -> np.random.Generator:
    return np.random.default_rng(seed_sequence(seed, *key))


def as_generator(rng) -> np.random.Generator:
    """Accept either an integer seed or an existing Generator."""
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(int(rng))
