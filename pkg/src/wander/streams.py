"""Keyed random streams.

Every draw is addressed by ``(master_seed, label, replica, index)`` and comes
from its own Philox counter stream, so the values for a given key never depend
on which other keys were drawn before, or on how work was split across threads.
"""

from __future__ import annotations

import numpy as np

LABELS = {"field": 1, "path": 2, "confine": 3}


def generator(master_seed: int, label: str, replica: int, index: int = 0) -> np.random.Generator:
    seq = np.random.SeedSequence(int(master_seed) & (2**64 - 1), spawn_key=(LABELS[label], int(replica), int(index)))
    return np.random.Generator(np.random.Philox(seq))


def normals(master_seed: int, label: str, replica: int, shape, index: int = 0) -> np.ndarray:
    return generator(master_seed, label, replica, index).standard_normal(shape)
