"""Named random streams derived from one root seed."""
from __future__ import annotations

import zlib

import numpy as np


def stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for sub-stream ``name`` (e.g. "dataset", "init", "dropout")."""
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(name.encode("utf-8"))])


def sub_seed(seed: int, name: str) -> int:
    return int(stream(seed, name).integers(0, 2**63 - 1))
