"""Small flat regression benchmarks used by tests and the BO efficacy study."""

from __future__ import annotations

import numpy as np

from .network import TrainingArrays
from .seeds import child_rng


def sine_benchmark(n_points: int = 500, seed: int = 0, noise_std: float = 0.0,
                   train_fraction: float = 0.7, dtype=np.float32):
    """1-D sine regression with a 70/30 train/validation split.

    Inputs are z-normalized, targets are standardized; both adapters carry
    the raw target std so RMSE traces come out in raw units.
    """
    rng = child_rng(seed, "sine")
    x = rng.uniform(-np.pi, np.pi, size=n_points)
    y = np.sin(x)
    if noise_std > 0:
        y = y + noise_std * rng.standard_normal(n_points)
    order = rng.permutation(n_points)
    n_train = int(round(train_fraction * n_points))
    tr, va = order[:n_train], order[n_train:]

    x_mean, x_std = float(np.mean(x[tr])), float(np.std(x[tr]))
    y_mean, y_std = float(np.mean(y[tr])), float(np.std(y[tr]))
    xn = (x - x_mean) / x_std
    yn = (y - y_mean) / y_std
    train = TrainingArrays(xn[tr, None], yn[tr], target_std=y_std, dtype=dtype)
    val = TrainingArrays(xn[va, None], yn[va], target_std=y_std, dtype=dtype)
    return train, val
