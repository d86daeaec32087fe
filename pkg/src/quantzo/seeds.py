"""Deterministic seed derivation for reproducible, stream-separated randomness.

Every source of randomness in a run (start vector, per-step directions,
oracle noise, probe directions) draws from its own counter-based stream,
keyed by a root seed plus integer stream tags. Two runs with the same root
seed consume identical streams regardless of scheduling.
"""

from __future__ import annotations

import numpy as np

# Stream tags. Values are arbitrary but frozen: changing them changes
# every derived stream.
STREAM_START = 1
STREAM_NOISE = 2
STREAM_DIRECTIONS = 3
STREAM_PROBES = 4


def derive_seed(*parts: int) -> int:
    """Collapse a tuple of integers into one 64-bit seed.

    Uses numpy's SeedSequence hashing, which is stable across platforms
    and numpy versions.
    """
    ss = np.random.SeedSequence([int(p) & 0xFFFFFFFF for p in parts])
    return int(ss.generate_state(1, np.uint64)[0])


def philox(seed: int) -> np.random.Generator:
    """Counter-based generator for direction sampling."""
    return np.random.Generator(np.random.Philox(seed))


def uniform_start(d: int, seed: int, low: float = -2.0, high: float = 2.0) -> np.ndarray:
    """Start vector convention: uniform on [low, high]^d per start seed."""
    rng = np.random.default_rng(seed)
    return rng.uniform(low, high, d)
