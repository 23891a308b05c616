"""Seeded, splittable random streams (Philox counter-based generator)."""

from __future__ import annotations

import zlib

import numpy as np


def _key(p) -> int:
    # string labels name independent streams; crc32 is stable across runs
    return zlib.crc32(p.encode()) if isinstance(p, str) else int(p)


def make_rng(seed, *path) -> np.random.Generator:
    """Generator for ``seed`` and an optional spawn path (ints or stream labels)."""
    ss = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=tuple(_key(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))


def split(seed, n):
    """``n`` independent generators derived from one seed."""
    return [make_rng(seed, i) for i in range(n)]
