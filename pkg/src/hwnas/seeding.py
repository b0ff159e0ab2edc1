"""Deterministic seed derivation.

Every random draw in a search is keyed by a tuple of non-negative integers,
so results do not depend on evaluation order or worker scheduling.
"""
from __future__ import annotations

import zlib

import numpy as np


def derive_seed(*parts: int) -> int:
    """Mix integer key parts into a 63-bit seed."""
    key = [int(p) for p in parts]
    if any(p < 0 for p in key):
        raise ValueError(f"seed parts must be non-negative: {key}")
    state = np.random.SeedSequence(key).generate_state(2, np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


def text_key(text: str) -> int:
    return zlib.crc32(text.encode("utf-8"))
