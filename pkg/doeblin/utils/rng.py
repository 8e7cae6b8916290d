"""
Seeding contract: every stochastic subsystem derives its own stream from a
single 64-bit root seed, a purpose tag and integer indices.
"""

import hashlib
from typing import Union

import numpy as np
from numpy.random import Generator, SeedSequence

from doeblin.core.exceptions import InvalidInputError

MAX_SEED = 2**64


def tag_key(tag: str) -> int:
    """Stable 64-bit integer for a purpose tag"""
    value = tag.value if hasattr(tag, "value") else str(tag)
    digest = hashlib.sha256(value.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def check_seed(seed: int) -> int:
    if not 0 <= int(seed) < MAX_SEED:
        raise InvalidInputError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return int(seed)


def derive_rng(root: int, tag: str, *indices: int) -> Generator:
    """Generator for hash(root, tag, indices); independent of call order"""
    spawn_key = (tag_key(tag),) + tuple(int(i) for i in indices)
    return np.random.default_rng(SeedSequence(entropy=check_seed(root), spawn_key=spawn_key))


def stream_entropy(rng: Generator) -> int:
    """Draw the entropy that seeds a family of child streams"""
    return int(rng.integers(0, 2**63))


def child_rng(entropy: int, index: int) -> Generator:
    """The index-th child stream of a family"""
    return np.random.default_rng(SeedSequence(entropy=entropy, spawn_key=(int(index),)))


def as_generator(rng: Union[Generator, int, None]) -> Generator:
    """No-op for a Generator; seeds a new one otherwise"""
    return np.random.default_rng(rng)
