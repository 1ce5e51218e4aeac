"""Seeded, splittable random streams.

Every stochastic routine derives its generator from ``(seed, purpose, *keys)`` so
that replicate ``r`` of a run always sees the same numbers, whatever else the run
asks for.  Purposes keep calibration pools and evaluation replicates disjoint.
"""

from __future__ import annotations

import numpy as np

SIMULATE = 1
CALIBRATE = 2
VALIDATE = 3
RANDOMIZE = 4
BENCH = 5


def generator(seed: int, purpose: int, *keys: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(purpose), *map(int, keys)))
    return np.random.Generator(np.random.PCG64(ss))
