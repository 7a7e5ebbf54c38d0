"""Deterministic random-stream derivation.

Every stochastic routine takes one user-supplied integer seed and derives
child generators through ``numpy.random.SeedSequence`` spawn keys.  The key
is a tuple of small integers (stream id, replicate index, chunk index, ...),
so results are reproducible by construction and independent of chunking or
worker count.
"""

from __future__ import annotations

import numpy as np

# Stream ids, one per independent consumer of the master seed.  Fixed
# forever; changing them changes every downstream draw.
STREAM_MC_TAIL = 1
STREAM_POWER = 2
STREAM_DGP = 3
STREAM_WEAK_TAIL = 4
STREAM_COVERAGE = 5


def child_seed_sequence(seed: int, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))


def child_rng(seed: int, *key: int) -> np.random.Generator:
    """Generator for stream ``key`` of ``seed``; stable across processes."""
    return np.random.default_rng(child_seed_sequence(seed, *key))
