"""Splittable, counter-based random streams.

Every sampler in the package takes an explicit ``numpy.random.Generator``.
Child streams are handed out by task index, so the numbers a task sees do not
depend on how many workers run or in which order tasks finish.
"""

import logging
import numpy as np

logger = logging.getLogger(__name__)


def root_stream(seed):
    """Create the root generator for a run.

    Args:
        seed: non-negative integer user seed

    Returns:
        numpy Generator backed by Philox
    """
    if seed is None or int(seed) < 0:
        raise ValueError(f"seed must be a non-negative integer, got {seed!r}")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))


def split(rng, n):
    """Spawn ``n`` independent child generators, indexed 0..n-1."""
    if n < 0:
        raise ValueError(f"cannot split into {n} streams")
    return rng.spawn(n)
