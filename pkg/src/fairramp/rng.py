"""Random number streams.

Every simulation draws from a :class:`numpy.random.Generator` backed by the
counter-based Philox bit generator.  Independent replication streams are
derived from one master seed with :meth:`numpy.random.SeedSequence.spawn`:
replication ``k`` uses ``SeedSequence(seed).spawn(R)[k]``.  The derived
streams depend only on ``(seed, k)``, so results do not change with the
number of worker threads or the order in which replications run.
"""

from __future__ import annotations

from typing import Union

import numpy as np

SeedLike = Union[int, np.random.SeedSequence, None]

__all__ = ["SeedLike", "make_rng", "spawn_seeds"]


def _as_seed_sequence(seed: SeedLike) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    if seed is None:
        raise ValueError("a seed is required for reproducible simulation")
    return np.random.SeedSequence(int(seed))


def make_rng(seed: SeedLike) -> np.random.Generator:
    """Philox generator for an integer seed or a spawned seed sequence."""
    return np.random.Generator(np.random.Philox(_as_seed_sequence(seed)))


def spawn_seeds(seed: SeedLike, n: int) -> list[np.random.SeedSequence]:
    """The ``n`` child seed sequences used for replications ``0..n-1``.

    A passed-in sequence is copied first, so repeated calls return the same
    children (``SeedSequence.spawn`` itself advances a counter).
    """
    ss = _as_seed_sequence(seed)
    fresh = np.random.SeedSequence(ss.entropy, spawn_key=ss.spawn_key, pool_size=ss.pool_size)
    return fresh.spawn(int(n))
