"""Deterministic derivation of independent random streams.

Every random object in the laboratory (a site's death clock, an edge's
arrow block, a block of estimator replicas) gets its own generator seeded
from a hash of the master seed and a key describing the object.  Query
order, worker count and replica count therefore never change a
realization.
"""

import hashlib

import numpy as np

__all__ = ["derive_seed", "derive_rng", "replica_blocks"]


def derive_seed(master_seed: int, *key) -> int:
    """Return a 128-bit seed for the object identified by ``key``.

    Keys are tuples of ints and short strings; they are hashed through
    BLAKE2b so that nearby keys give unrelated seeds.
    """
    payload = repr((int(master_seed),) + tuple(key)).encode()
    digest = hashlib.blake2b(payload, digest_size=16, person=b"rcplab-stream").digest()
    return int.from_bytes(digest, "little")


def derive_rng(master_seed: int, *key) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(master_seed, *key)))


def replica_blocks(replicas: int, block_size: int):
    """Yield ``(block_index, size)`` pairs covering ``replicas`` replicas."""
    start = 0
    index = 0
    while start < replicas:
        size = min(block_size, replicas - start)
        yield index, size
        start += size
        index += 1
