"""Named random sub-streams derived from one root seed.

Every consumer asks for its own stream by name, so turning one component
on or off never shifts the random numbers another component sees.
"""

import zlib

import numpy as np


def stream(seed: int, name: str, *extra: int) -> np.random.Generator:
    key = [int(seed), zlib.crc32(name.encode("utf-8"))]
    key.extend(int(e) for e in extra)
    return np.random.default_rng(np.random.SeedSequence(key))
