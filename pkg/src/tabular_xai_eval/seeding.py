"""Stable seed derivation shared by every randomized stage."""

import hashlib

import numpy as np


def derive_seed(*parts: object) -> int:
    """Mix a master seed and stage identifiers into a 64-bit seed.

    The mix is BLAKE2b over the ``repr`` of each part, so the result does not
    depend on ``PYTHONHASHSEED``, platform, or the order in which parallel
    tasks happen to run.

    Args:
        parts: Integers and strings identifying the stage (master seed,
            dataset id, stage name, sample id, technique, ...)

    Returns:
        Unsigned 64-bit integer seed
    """
    digest = hashlib.blake2b(digest_size=8)
    for part in parts:
        digest.update(repr(part).encode("utf-8"))
        digest.update(b"\x1f")
    return int.from_bytes(digest.digest(), "little")


def rng_for(*parts: object) -> np.random.Generator:
    """Return a numpy Generator seeded from ``derive_seed(*parts)``."""
    return np.random.default_rng(derive_seed(*parts))
