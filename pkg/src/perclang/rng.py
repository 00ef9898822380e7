"""Deterministic RNG stream derivation.

Every stochastic operation in this package takes either an explicit
``numpy.random.Generator`` or a root seed from which per-item generators are
derived. Derivation is counter-based: the root seed plus an integer path
(e.g. ``(batch_index, example_index)``) selects a ``SeedSequence`` spawn key,
so any work item can be regenerated in isolation and results never depend on
worker scheduling.
"""

from __future__ import annotations

import numpy as np

__all__ = ["derive", "spawn_seed"]


def spawn_seed(root_seed: int, *path: int) -> np.random.SeedSequence:
    """SeedSequence for the stream addressed by ``path`` under ``root_seed``."""
    return np.random.SeedSequence(entropy=root_seed, spawn_key=tuple(path))


def derive(root_seed: int, *path: int) -> np.random.Generator:
    """Independent generator for the stream addressed by ``path``."""
    return np.random.default_rng(spawn_seed(root_seed, *path))
