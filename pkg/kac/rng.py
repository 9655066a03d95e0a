"""
Seeded random streams.

Every random draw in the engine comes from a Philox generator (counter-based,
64-bit) keyed by the master seed; replicas and sub-streams are split through
the SeedSequence spawn key, so stream (seed, r) never depends on how many
other replicas ran or in which order.
"""

from typing import Optional

import numpy as np

__all__ = ["make_rng", "stream_seed"]


def stream_seed(master_seed: int, replica: int = 0, stream: int = 0) -> np.random.SeedSequence:
    """Return the SeedSequence for ``(master_seed, replica, stream)``."""
    if master_seed < 0:
        raise ValueError(f"`master_seed` should be non-negative, not {master_seed}")
    return np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(replica), int(stream)))


def make_rng(master_seed: int, replica: int = 0, stream: int = 0,
             generator: Optional[np.random.Generator] = None) -> np.random.Generator:
    """
    Build the generator for one replica stream.

    Passing an existing ``generator`` returns it untouched, which lets callers
    thread a generator through helper functions that also accept seeds.
    """
    if generator is not None:
        return generator
    return np.random.Generator(np.random.Philox(stream_seed(master_seed, replica, stream)))
