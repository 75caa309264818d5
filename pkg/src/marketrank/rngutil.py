"""Deterministic random-stream derivation.

Every stochastic component (generator, batch sampling, ES children,
stochastic value functions) draws from a stream derived from an explicit
key path, so runs are reproducible and independent of evaluation order.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def derive_rng(*keys: int) -> np.random.Generator:
    """Return a Generator seeded from an ordered tuple of integer keys.

    The same key path always yields the same stream; distinct paths yield
    statistically independent streams (SeedSequence guarantees).
    """
    entropy = [int(k) & _MASK64 for k in keys]
    return np.random.default_rng(np.random.SeedSequence(entropy))
