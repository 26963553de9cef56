"""Deterministic seed derivation.

Every random stream is a :class:`numpy.random.SeedSequence` built from the
master seed plus an integer spawn key, e.g. ``(1, private_index, replicate,
epsilon_index)``. SeedSequence hashes the entropy and key words together, so
distinct keys give independent streams regardless of which worker runs them.
"""

from __future__ import annotations

import secrets

import numpy as np

MAX_SEED = 2 ** 63 - 1


def seed_sequence(seed: int, *keys: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))


def derive_seed(seed: int, *keys: int) -> int:
    """63-bit integer seed for the stream at ``keys`` under ``seed``."""
    state = seed_sequence(seed, *keys).generate_state(2, np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1])) & MAX_SEED


def rng_for(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(seed_sequence(seed, *keys))


def fresh_seed() -> int:
    return secrets.randbelow(MAX_SEED)
