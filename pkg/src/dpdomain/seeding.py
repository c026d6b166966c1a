"""Deterministic RNG substream derivation.

All randomized operations in this package take an integer master seed and
derive independent substreams from it with ``numpy.random.SeedSequence``.
A substream is addressed by a path of non-negative integers (stage tags,
round indices, user indices), so results never depend on scheduling or on
how many other substreams were consumed.
"""

from __future__ import annotations

import numpy as np

# Default seed used by the CLI when none is given; documented in README.
DEFAULT_SEED = 42


def _validate_seed(seed: int) -> int:
    if not isinstance(seed, (int, np.integer)) or seed < 0:
        raise ValueError(f"seed must be a non-negative integer, got {seed!r}")
    return int(seed)


def substream(seed: int, *path: int) -> np.random.Generator:
    """Returns a PCG64 generator for the substream addressed by (seed, *path)."""
    ss = np.random.SeedSequence((_validate_seed(seed),) + tuple(int(p) for p in path))
    return np.random.Generator(np.random.PCG64(ss))


def child_seed(seed: int, *path: int) -> int:
    """Returns a derived integer seed usable as a new master seed."""
    ss = np.random.SeedSequence((_validate_seed(seed),) + tuple(int(p) for p in path))
    return int(ss.generate_state(2, np.uint64)[0])
