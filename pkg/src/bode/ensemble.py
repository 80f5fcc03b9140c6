"""Ensemble aggregation and uncertainty decomposition.

The ensemble treats each member as a Gaussian predictor (mu_i, sigma_i^2);
the mixture mean is the average of member means, the total predictive
variance is ``mean(sigma_i^2 + mu_i^2) - mu^2`` and splits into an aleatoric
part (average member variance, the data-noise estimate) and an epistemic
part (spread of member means, the model-uncertainty estimate).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import DenseNet, DenseNetSpec, MemberPrediction, TrainResult, train
from .hyperspace import BASELINE
from .seeds import child_seed


@dataclass
class EnsemblePrediction:
    mean: np.ndarray
    total_var: np.ndarray
    aleatoric_var: np.ndarray
    epistemic_var: np.ndarray
    n_members: int


def aggregate(members: list[MemberPrediction]) -> EnsemblePrediction:
    """Combine member predictions on one shared batch.

    Requires at least two members (the mean-spread term is meaningless for
    one).  Computed in float64; each variance component follows its own
    defining formula, so the decomposition identity holds to accumulation
    error only and the epistemic term is clamped at zero against roundoff.
    """
    if len(members) < 2:
        raise ValueError("ensemble aggregation needs at least 2 members")
    shape = members[0].mean.shape
    for m in members:
        if m.mean.shape != shape or m.variance.shape != shape:
            raise ValueError("all member predictions must share one batch shape")
    mus = np.stack([m.mean for m in members]).astype(np.float64)
    sig2 = np.stack([m.variance for m in members]).astype(np.float64)
    mu = mus.mean(axis=0)
    total = np.mean(sig2 + mus**2, axis=0) - mu**2
    aleatoric = sig2.mean(axis=0)
    epistemic = np.maximum(np.mean(mus**2, axis=0) - mu**2, 0.0)
    return EnsemblePrediction(
        mean=mu,
        total_var=total,
        aleatoric_var=aleatoric,
        epistemic_var=epistemic,
        n_members=len(members),
    )


def member_prediction_raw(net: DenseNet, x: np.ndarray,
                          target_stats: tuple[float, float]) -> MemberPrediction:
    """Inference-mode prediction de-normalized into raw target units."""
    pred = net.forward(x, train_mode=False)
    mean, std = target_stats
    return MemberPrediction(
        mean=pred.mean.astype(np.float64) * std + mean,
        variance=pred.variance.astype(np.float64) * std**2,
    )


def train_baseline_ensemble(train_data, val_data, seeds, epochs: int,
                            input_dim: int, noise_injector_factory=None,
                            dtype=np.float32) -> list[TrainResult]:
    """Train M members of the fixed reference configuration, one per seed."""
    spec = DenseNetSpec.from_config(input_dim, BASELINE)
    results = []
    for seed in seeds:
        injector = noise_injector_factory() if noise_injector_factory else None
        results.append(
            train(spec, train_data, val_data, BASELINE, epochs=epochs,
                  seed=seed, noise_injector=injector, dtype=dtype)
        )
    return results


def train_bode_ensemble(train_data, val_data, configs, seeds, epochs: int,
                        input_dim: int, noise_injector_factory=None,
                        dtype=np.float32) -> list[TrainResult]:
    """Train one member per optimized configuration on the full train split."""
    if len(configs) != len(seeds):
        raise ValueError(
            f"got {len(configs)} configs but {len(seeds)} seeds; one seed per member"
        )
    results = []
    for cfg, seed in zip(configs, seeds):
        spec = DenseNetSpec.from_config(input_dim, cfg)
        injector = noise_injector_factory() if noise_injector_factory else None
        results.append(
            train(spec, train_data, val_data, cfg, epochs=epochs,
                  seed=seed, noise_injector=injector, dtype=dtype)
        )
    return results


def member_seeds(master_seed: int, label: str, n: int) -> list[int]:
    return [child_seed(master_seed, label, i) for i in range(n)]
