"""
Stage-tagged seed derivation.

A single root seed fans out to every stochastic stage of the pipeline
(split, augmentation, clustering, weight init, ...). Each stage hashes the
root seed together with its own tags, so any stage can be re-run in
isolation and parallel execution matches serial execution bit for bit.
"""

import hashlib
from typing import Union

import numpy as np

Tag = Union[str, int]


def derive_seed(seed: int, *tags: Tag) -> int:
    """
    Derive a 64-bit child seed from a root seed and stage tags.

    Args:
        seed: Root seed (any integer)
        *tags: Stage identifiers, e.g. ("cluster", 17, "gmm", 4)

    Returns:
        Non-negative integer below 2**63

    Example:
        >>> derive_seed(1, "augment", 7) == derive_seed(1, "augment", 7)
        True
    """
    text = "/".join([str(int(seed))] + [str(tag) for tag in tags])
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") >> 1


def stage_rng(seed: int, *tags: Tag) -> np.random.Generator:
    """Return an independent numpy Generator for one pipeline stage."""
    return np.random.default_rng(derive_seed(seed, *tags))
