"""Deterministic sub-seed derivation.

Every stochastic component gets its own ``numpy.random.Generator`` built from
``SeedSequence(entropy=seed, spawn_key=keys)``. Keys are small integers
(device index, repeat index, neuron index, ...) or strings; strings are mapped
to integers with CRC-32 so that the scheme is stable across Python processes.
"""
from __future__ import annotations

import zlib

import numpy as np


def _key(k: int | str) -> int:
    if isinstance(k, str):
        return zlib.crc32(k.encode("utf-8"))
    k = int(k)
    if k < 0:
        raise ValueError(f"seed keys must be non-negative, got {k}")
    return k


def derive_seed(seed: int, *keys: int | str) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key(k) for k in keys))


def make_rng(seed: int, *keys: int | str) -> np.random.Generator:
    """Generator for the component addressed by ``keys`` under ``seed``."""
    return np.random.default_rng(derive_seed(seed, *keys))


def derive_int(seed: int, *keys: int | str) -> int:
    """A 63-bit integer seed, for handing to components that take plain ints."""
    return int(derive_seed(seed, *keys).generate_state(2, dtype=np.uint32).view(np.uint64)[0] >> np.uint64(1))
