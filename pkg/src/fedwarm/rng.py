"""Deterministic named randomness streams.

Every random decision in the simulator (weight init, synthetic data,
partitioning, participant selection, batch shuffles) draws from its own
counter-based Philox generator keyed by the experiment seed plus fixed
integer tags. Streams are independent of each other and of execution
order, so threaded and sequential schedules see identical draws.
"""

from __future__ import annotations

import numpy as np

# Stream tags. A new consumer of randomness must claim a fresh tag here so
# existing streams never shift.
INIT = 0
SYNTHETIC = 1
PARTITION = 2
SELECT = 3
TRAIN_USER = 4
WARMUP = 5
PRETRAIN = 6
CENTRALIZED = 7
GRADCHECK = 8


def stream(seed: int, *tags: int) -> np.random.Generator:
    """Return the generator for the (seed, *tags) stream.

    The same (seed, tags) pair always yields an identical sequence; any
    change to either yields a statistically independent one.
    """
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    key = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(t) for t in tags))
    return np.random.Generator(np.random.Philox(key))
