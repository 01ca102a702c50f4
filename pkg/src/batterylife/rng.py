"""Seed derivation.

Every random stream in the package is a ``numpy.random.Generator`` backed by
PCG64 and seeded through :func:`derive_seed`, so that a single master seed
fixes a whole run and independent consumers never share a stream.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _key_words(key) -> list[int]:
    if isinstance(key, (int, np.integer)) and not isinstance(key, bool):
        return [int(key) & 0xFFFFFFFF, (int(key) >> 32) & 0xFFFFFFFF]
    digest = hashlib.sha256(str(key).encode("utf-8")).digest()
    return [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]


def derive_seed(master: int, *keys) -> np.random.SeedSequence:
    """Child seed sequence for ``keys`` under ``master``.

    Keys may be ints or strings; strings are hashed with SHA-256 so the
    result does not depend on ``PYTHONHASHSEED`` or the platform.
    """
    spawn_key: list[int] = []
    for key in keys:
        spawn_key.extend(_key_words(key))
    return np.random.SeedSequence(entropy=int(master), spawn_key=tuple(spawn_key))


def make_rng(master: int, *keys) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(master, *keys)))
