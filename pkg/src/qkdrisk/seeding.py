"""Splittable seed derivation.

Every random draw in the package is keyed by ``(master_seed, *path)`` through
:class:`numpy.random.SeedSequence` spawn keys, so a result never depends on
execution order and serial and parallel runs agree.
"""

from __future__ import annotations

import numpy as np


def derive_seed(master: int, *path: int) -> int:
    """Return a 63-bit seed for the node ``path`` below ``master``."""
    ss = np.random.SeedSequence(int(master), spawn_key=tuple(int(p) for p in path))
    hi, lo = ss.generate_state(2, dtype=np.uint32)
    return int((int(hi) << 32 | int(lo)) & 0x7FFF_FFFF_FFFF_FFFF)


def rng_for(master: int, *path: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(master), spawn_key=tuple(int(p) for p in path)))
