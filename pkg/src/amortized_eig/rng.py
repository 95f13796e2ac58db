"""Deterministic stream splitting.

Every stochastic routine takes an explicit :class:`numpy.random.Generator`.
Child streams are addressed by integer keys so that, e.g., the stream for
(step 12, design 3) never depends on how many draws other steps consumed.
"""
from __future__ import annotations

import numpy as np


def stream(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys)))


# fixed sub-stream tags
OUTER = 0
INNER = 1
DESIGNS = 2
INIT = 3
TRAIN = 4
EVAL = 5
