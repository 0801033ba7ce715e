"""Seeded random streams.

Every consumer asks for a named stream, e.g. make_rng(seed, "fit", object_id).
Streams are Philox generators keyed by the seed and a stable hash of the names,
so results never depend on call order between unrelated consumers.
"""

import zlib

import numpy as np


def _stream_key(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    return zlib.crc32(str(part).encode("utf-8"))


def make_rng(seed: int, *stream) -> np.random.Generator:
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_stream_key(s) for s in stream))
    return np.random.Generator(np.random.Philox(seq))
