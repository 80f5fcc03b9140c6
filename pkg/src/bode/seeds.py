"""Deterministic seed derivation.

All stochastic components (member training, noise draws, GP restarts, MC
acquisition streams) derive their seeds from a master seed plus a structural
path, so runs are reproducible end to end and independent components never
share a stream.
"""

from __future__ import annotations

import zlib

import numpy as np


def _as_entropy(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFFFFFFFFFF
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    raise TypeError(f"seed path parts must be int or str, got {type(part)!r}")


def child_seed(*path) -> int:
    """Stable 32-bit seed for a (master_seed, *labels) derivation path."""
    entropy = [_as_entropy(p) for p in path]
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


def child_rng(*path) -> np.random.Generator:
    return np.random.default_rng(child_seed(*path))
