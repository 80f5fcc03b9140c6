"""Mapping between the unit hypercube and network hyperparameter configs.

The optimizer (Sobol + GP + acquisition) works on ``[0, 1]^8``; this module
owns the translation to concrete training configurations.  Continuous rates
covering two orders of magnitude are encoded log-uniformly, the drop rate
linearly, and discrete fields by equal-width binning over their ordered value
sets (decode maps a coordinate to a bin, encode returns the bin center).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

DIMENSION = 8

RATE_BOUNDS = (1e-4, 1e-2)  # learning rate and weight decay
DROP_RATE_MAX = 0.5
BATCH_SIZES = (8, 12, 16, 24, 32, 48, 64, 128)
DENSE_BLOCK_COUNTS = (3, 5)
LAYER_COUNTS = (3, 4, 5, 6, 7, 8, 9)
GROWTH_RATES = (8, 12, 16, 24, 32, 48)
INITIAL_FEATURE_COUNTS = (8, 12, 16, 24, 32, 48, 64, 128)


@dataclass(frozen=True)
class HyperConfig:
    """One point of the 8-dimensional search space."""

    learning_rate: float
    weight_decay: float
    drop_rate: float
    batch_size: int
    n_dense_blocks: int
    layers_per_block: int
    growth_rate: int
    initial_features: int

    def __post_init__(self):
        lo, hi = RATE_BOUNDS
        if not (lo <= self.learning_rate <= hi):
            raise ValueError(f"learning_rate {self.learning_rate} outside [{lo}, {hi}]")
        if not (lo <= self.weight_decay <= hi):
            raise ValueError(f"weight_decay {self.weight_decay} outside [{lo}, {hi}]")
        if not (0.0 <= self.drop_rate <= DROP_RATE_MAX):
            raise ValueError(f"drop_rate {self.drop_rate} outside [0, {DROP_RATE_MAX}]")
        for name, value, allowed in (
            ("batch_size", self.batch_size, BATCH_SIZES),
            ("n_dense_blocks", self.n_dense_blocks, DENSE_BLOCK_COUNTS),
            ("layers_per_block", self.layers_per_block, LAYER_COUNTS),
            ("growth_rate", self.growth_rate, GROWTH_RATES),
            ("initial_features", self.initial_features, INITIAL_FEATURE_COUNTS),
        ):
            if value not in allowed:
                raise ValueError(f"{name} {value} not in {allowed}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "HyperConfig":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__})

    def block_layers(self) -> tuple[int, ...]:
        """Per-block layer counts (the search space shares one value)."""
        return (self.layers_per_block,) * self.n_dense_blocks


@dataclass(frozen=True)
class BaselineConfig:
    """Manually tuned reference configuration (fixed constants)."""

    batch_size: int = 16
    learning_rate: float = 0.0008
    weight_decay: float = 0.002
    n_dense_blocks: int = 3
    block_layer_counts: tuple[int, ...] = (3, 4, 5)
    growth_rate: int = 16
    drop_rate: float = 0.15
    initial_features: int = 32
    epochs: int = 200

    def block_layers(self) -> tuple[int, ...]:
        return self.block_layer_counts

    def to_dict(self) -> dict:
        d = asdict(self)
        d["block_layer_counts"] = list(self.block_layer_counts)
        return d


BASELINE = BaselineConfig()


def _decode_log(u: float) -> float:
    lo, hi = RATE_BOUNDS
    return 10.0 ** (math.log10(lo) + u * (math.log10(hi) - math.log10(lo)))


def _encode_log(v: float) -> float:
    lo, hi = RATE_BOUNDS
    return (math.log10(v) - math.log10(lo)) / (math.log10(hi) - math.log10(lo))


def _decode_choice(u: float, values: tuple) -> int:
    idx = min(int(u * len(values)), len(values) - 1)
    return values[idx]


def _encode_choice(v, values: tuple) -> float:
    return (values.index(v) + 0.5) / len(values)


def decode(u) -> HyperConfig:
    """Map a unit-cube point to a configuration."""
    u = np.asarray(u, dtype=float)
    if u.shape != (DIMENSION,):
        raise ValueError(f"expected a {DIMENSION}-dimensional point, got shape {u.shape}")
    if np.any(u < 0.0) or np.any(u > 1.0):
        raise ValueError(f"coordinates outside [0, 1]: {u}")
    return HyperConfig(
        learning_rate=_decode_log(u[0]),
        weight_decay=_decode_log(u[1]),
        drop_rate=DROP_RATE_MAX * u[2],
        batch_size=_decode_choice(u[3], BATCH_SIZES),
        n_dense_blocks=_decode_choice(u[4], DENSE_BLOCK_COUNTS),
        layers_per_block=_decode_choice(u[5], LAYER_COUNTS),
        growth_rate=_decode_choice(u[6], GROWTH_RATES),
        initial_features=_decode_choice(u[7], INITIAL_FEATURE_COUNTS),
    )


def encode(cfg: HyperConfig) -> np.ndarray:
    """Left inverse of `decode` on bin centers: decode(encode(cfg)) == cfg."""
    return np.array(
        [
            _encode_log(cfg.learning_rate),
            _encode_log(cfg.weight_decay),
            cfg.drop_rate / DROP_RATE_MAX,
            _encode_choice(cfg.batch_size, BATCH_SIZES),
            _encode_choice(cfg.n_dense_blocks, DENSE_BLOCK_COUNTS),
            _encode_choice(cfg.layers_per_block, LAYER_COUNTS),
            _encode_choice(cfg.growth_rate, GROWTH_RATES),
            _encode_choice(cfg.initial_features, INITIAL_FEATURE_COUNTS),
        ]
    )
