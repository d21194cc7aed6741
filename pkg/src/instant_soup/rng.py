"""Named random streams derived from one root seed."""

from __future__ import annotations

import zlib

import numpy as np


def stream_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def derive_rng(seed: int, *names: str | int) -> np.random.Generator:
    """Generator for the stream ``names`` under root ``seed``.

    The same (seed, names) always yields the same sequence, independently of
    which other streams have been drawn from.
    """
    key = [int(seed)]
    for n in names:
        key.append(stream_key(n) if isinstance(n, str) else int(n))
    return np.random.default_rng(key)
