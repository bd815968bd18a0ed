"""Seeded generator construction.

All randomness in the toolkit flows through Philox, a counter-based bit
generator, so every run is exactly replayable from its integer seed(s).
Multi-part entropy (e.g. ``make_rng(seed, sample_index)``) derives
independent per-item streams.
"""

import numpy as np

_MASK64 = (1 << 64) - 1


def make_rng(*entropy: int) -> np.random.Generator:
    parts = tuple(int(e) & _MASK64 for e in entropy)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(parts)))
