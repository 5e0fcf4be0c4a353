"""One master seed, many independent streams.

Each purpose string maps to its own 32-bit seed through ``SeedSequence``,
so any single stage (data, splitting, init, episodes) can be re-run alone.
"""

import zlib

import numpy as np


def derive_seed(master: int, purpose: str) -> int:
    tag = zlib.crc32(purpose.encode("utf-8"))
    return int(np.random.SeedSequence([int(master), tag]).generate_state(1)[0])


def rng_for(master: int, purpose: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, purpose))
