"""Seeded, splittable random number generation.

Every stochastic operation in the package draws from a generator derived
from a base seed plus a string tag, so independent subsystems (dropout,
shuffling, init) never share or disturb each other's streams, and a run
is fully reproducible from its seed alone.
"""

from __future__ import annotations

import hashlib

import numpy as np

DEFAULT_SEED = 42


def derive(seed: int, *tags) -> np.random.Generator:
    """Return a Generator keyed by (seed, tags).

    The tag tuple is hashed with sha256 so derivation is stable across
    platforms and Python versions (unlike hash()).
    """
    text = ":".join(str(t) for t in tags)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    entropy = [int(seed) & 0xFFFFFFFF, *np.frombuffer(digest[:16], dtype=np.uint32).tolist()]
    return np.random.default_rng(np.random.SeedSequence(entropy))
