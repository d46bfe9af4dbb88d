"""Deterministic derivation of sub-streams from a single experiment seed.

Every source of randomness in the pipeline (embedding init, per-epoch view
masks, batch sampling, noise injection, ...) pulls its generator from
`derive_rng(seed, *tags)`.  Tags are strings or ints; strings are hashed with
crc32 so the derivation is stable across processes and platforms.
"""

from zlib import crc32

import numpy as np


def _tag_to_int(tag) -> int:
    if isinstance(tag, (int, np.integer)):
        return int(tag)
    return crc32(str(tag).encode("utf-8"))


def derive_rng(seed: int, *tags) -> np.random.Generator:
    """Generator for the sub-stream identified by (seed, *tags)."""
    entropy = [int(seed)] + [_tag_to_int(t) for t in tags]
    return np.random.default_rng(np.random.SeedSequence(entropy))
