"""Deterministic random streams keyed by (seed, purpose, indices)."""

from __future__ import annotations

import zlib

import numpy as np


def _tag(key: int | str) -> int:
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    if key < 0:
        raise ValueError(f"stream keys must be nonnegative, got {key}")
    return int(key)


def stream(seed: int, *keys: int | str) -> np.random.Generator:
    """Return an independent generator for ``(seed, *keys)``.

    The same arguments always give the same stream, regardless of the
    order in which streams are requested, so repetitions can be scheduled
    in any order without changing results.
    """
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=tuple(_tag(k) for k in keys))
    return np.random.default_rng(ss)


def derive_seed(seed: int, *keys: int | str) -> int:
    """Derive a 63-bit integer seed for ``(seed, *keys)``."""
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=tuple(_tag(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
