"""Seeded random streams.

Every stochastic routine takes an explicit :class:`numpy.random.Generator`.
Parallel work derives its stream with :func:`child`, keyed by the replicate
number, so results never depend on scheduling or worker count.
"""

from __future__ import annotations

import numpy as np


def make_rng(seed: int, *key: int) -> np.random.Generator:
    """Counter-based (Philox) generator for ``seed`` and an optional spawn key."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def child(seed: int, *key: int) -> np.random.Generator:
    """Stream for replicate ``key`` of a computation seeded with ``seed``."""
    return make_rng(seed, *key)


def child_seed(rng: np.random.Generator) -> int:
    """Draw a 63-bit seed from ``rng`` to key a family of child streams."""
    return int(rng.integers(0, 2**63 - 1))
