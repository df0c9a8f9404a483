"""Named, independent RNG streams derived from one root seed.

Each pipeline stage (scenario layout, sensor noise, query generation) gets
its own stream so that reconfiguring one stage never perturbs the draws of
another.  This is what makes baseline-vs-closed-loop runs of the same seed
a paired comparison: both arms consume identical scenario and sensor
randomness and differ only in how queries are assembled.
"""

from __future__ import annotations

import zlib

import numpy as np


def stream(seed: int, name: str) -> np.random.Generator:
    """Return a generator for the stream `name` under root `seed`.

    The stream key is a CRC32 of the name, so the mapping is stable across
    processes and platforms.
    """
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(key,)))
