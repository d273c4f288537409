"""Named, splittable random streams.

Every stream is ``numpy.random.Generator(PCG64(SeedSequence(seed, spawn_key)))``
where the spawn key is built from stream names (CRC-32 of the UTF-8 name) and
integers. The same (seed, names) pair gives the same stream on any platform.
"""

from __future__ import annotations

import zlib

import numpy as np

RNG_ALGORITHM = "pcg64-seedsequence"


def _key(part) -> int:
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError("stream ids must be non-negative")
        return int(part)
    return zlib.crc32(str(part).encode("utf-8"))


def make_rng(seed: int, *stream) -> np.random.Generator:
    """Generator for the stream ``stream`` under master ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key(p) for p in stream))
    return np.random.Generator(np.random.PCG64(ss))


def check_rng(rng) -> np.random.Generator:
    if rng is None:
        return make_rng(0)
    if isinstance(rng, np.random.Generator):
        return rng
    return make_rng(int(rng))


def sample_categorical(probs, rng: np.random.Generator) -> int:
    """Inverse-CDF draw consuming exactly one uniform."""
    cdf = np.cumsum(probs)
    u = rng.random() * cdf[-1]
    return int(min(np.searchsorted(cdf, u, side="right"), len(cdf) - 1))
