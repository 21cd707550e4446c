"""Deterministic seed derivation for runs, seeds, and variants.

A single master seed fans out through ``numpy.random.SeedSequence`` keyed by
(master, variant id, seed index). Each variant owns a fixed id, so adding or
removing one variant from a run never shifts the streams of the others, and
the i-th seed of a variant is stable across processes and sweep points.
"""

from __future__ import annotations

import numpy as np

VARIANT_IDS = {
    "sim": 0,
    "surrogate": 1,
    "dmft": 2,
    "direct": 3,
    "nongauss": 4,
    "closedform": 5,
    "estimation": 6,
    "evaluation": 7,
}


def seed_for(master_seed: int, variant: str, index: int) -> int:
    """The integer RNG seed for one (variant, repeat index) pair."""
    vid = VARIANT_IDS[variant]
    seq = np.random.SeedSequence(entropy=(int(master_seed), vid, int(index)))
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def seeds_for(master_seed: int, variant: str, count: int) -> list[int]:
    return [seed_for(master_seed, variant, i) for i in range(count)]
