"""Seed derivation. Every stream is keyed by (master seed, purpose, ids...),
never by execution order, so results do not depend on worker scheduling."""
from __future__ import annotations

import numpy as np

DATA = 0
PARTITION = 1
SPLIT = 2
MODEL = 3
ADAPTER = 4
SAMPLE = 5
TRAIN = 6

GLOBAL_MODEL_ID = 2**31 - 1


def rng_for(master_seed: int, purpose: int, *ids: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), purpose, *map(int, ids)]))


def client_round_rng(master_seed: int, client_id: int, round_index: int) -> np.random.Generator:
    return rng_for(master_seed, TRAIN, client_id, round_index)
