"""
Named random streams.

All randomness in a run flows from one 64-bit seed. Each consumer asks for
a stream by purpose ("data", "init", "search") so that, for example, adding
a shuffle to the search does not change the initial weights drawn for the
same seed.
"""
import zlib

import numpy as np

PURPOSES = ("data", "init", "search")


def stream(seed: int, purpose: str) -> np.random.Generator:
    if purpose not in PURPOSES:
        raise ValueError(f"unknown random stream {purpose!r}")
    key = zlib.crc32(purpose.encode())
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), key]))
