"""Named random substreams derived from a single run seed.

Every source of randomness (data synthesis, parameter init, dropout masks,
epoch shuffling) pulls from its own generator so that changing how one
consumer draws numbers cannot silently shift another consumer's stream.
"""

import zlib

import numpy as np


def substream(seed: int, name: str) -> np.random.Generator:
    """Deterministic generator for (seed, name); stable across platforms."""
    tag = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([int(seed), tag]))
