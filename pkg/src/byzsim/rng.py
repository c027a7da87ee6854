"""Addressable random substreams derived from a single master seed.

Every consumer of randomness asks for a stream by ``(master, tag, *ids)``.
The key is hashed with BLAKE2b into 128 bits of entropy for a
``numpy.random.SeedSequence``, so streams are independent of the order in
which they are requested and of any thread scheduling.
"""
import hashlib

import numpy as np


def stream_key(master, tag, *ids):
    h = hashlib.blake2b(digest_size=16)
    h.update(str(int(master)).encode())
    h.update(b"\x00")
    h.update(str(tag).encode())
    for i in ids:
        h.update(b"\x00")
        h.update(str(int(i)).encode())
    return int.from_bytes(h.digest(), "little")


def substream(master, tag, *ids):
    """Return a fresh ``Generator`` for the stream ``(master, tag, *ids)``."""
    return np.random.default_rng(np.random.SeedSequence(stream_key(master, tag, *ids)))


def derive_seed(master, tag, *ids):
    """A 63-bit integer seed for APIs that take plain ints."""
    return stream_key(master, tag, *ids) >> 65
