"""Seeded random streams.

All randomness comes from numpy's PCG64 bit generator (128-bit state
permuted congruential generator, 64-bit outputs) keyed by a
``SeedSequence`` built from the user seed plus any integer sub-keys, such as
an instance or trial index.  Gaussians use ``Generator.standard_normal``
(ziggurat method); uniforms use ``Generator.random`` (53-bit doubles).
"""
from __future__ import annotations

import numpy as np


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for ``(seed, *keys)``; same inputs, same stream."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, keys)])))
