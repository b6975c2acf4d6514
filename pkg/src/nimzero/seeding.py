"""One master seed, split into independent streams by purpose.

Every stream is ``SeedSequence(master, spawn_key=(purpose, *indices))``, so a
stream depends only on what it is for (and e.g. which iteration and episode),
never on how work was scheduled across processes.
"""
from __future__ import annotations

import numpy as np

INIT = 0  # network weights
SELFPLAY = 1  # (iteration, episode)
TRAIN = 2  # (iteration,) minibatch draws
EVAL = 3  # position samples for metrics
ELO = 4  # (iteration,) tournament games
SUPERVISED = 5  # parity / nim-sum labs: (0,) training data, (1,) eval data


def stream(master: int, purpose: int, *indices: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(master, spawn_key=(purpose, *indices)))
