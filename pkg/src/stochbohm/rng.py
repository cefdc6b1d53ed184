"""Named, seed-derived random streams.

Every consumer asks for its own stream by name, so adding a new consumer never
shifts the numbers another one sees.  Philox is counter-based, which keeps
chunked or threaded use reproducible.
"""

import zlib

import numpy as np

MAX_SEED = 2**64 - 1


def substream(seed: int, name: str) -> np.random.Generator:
    if not 0 <= int(seed) <= MAX_SEED:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=(key,))))
