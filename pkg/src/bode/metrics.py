"""Scalar accuracy metrics and uncertainty-calibration diagnostics.

All metrics are computed in raw target units so reports stay comparable
across normalization schemes.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np
from scipy.stats import norm

from .ensemble import EnsemblePrediction


def rmse(y, mu) -> float:
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    mu = np.asarray(mu, dtype=np.float64).reshape(-1)
    if y.size == 0:
        raise ValueError("rmse of empty input")
    if y.shape != mu.shape:
        raise ValueError(f"length mismatch: {y.shape} vs {mu.shape}")
    return float(np.sqrt(np.mean((y - mu) ** 2)))


def r_squared(y, mu) -> float:
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    mu = np.asarray(mu, dtype=np.float64).reshape(-1)
    if y.shape != mu.shape:
        raise ValueError(f"length mismatch: {y.shape} vs {mu.shape}")
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        raise ValueError("R^2 undefined for zero-variance targets")
    ss_res = float(np.sum((y - mu) ** 2))
    return 1.0 - ss_res / ss_tot


def mean_nll(y, mean, variance) -> float:
    """Average Gaussian negative log-likelihood of targets under (mean, var)."""
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    mean = np.asarray(mean, dtype=np.float64).reshape(-1)
    var = np.asarray(variance, dtype=np.float64).reshape(-1)
    return float(np.mean(0.5 * (np.log(2.0 * np.pi * var) + (y - mean) ** 2 / var)))


def coverage(y, pred: EnsemblePrediction, nominal: float) -> float:
    """Fraction of targets inside the central ``nominal`` interval."""
    if not (0.0 < nominal < 1.0):
        raise ValueError("nominal level must be in (0, 1)")
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.size == 0:
        raise ValueError("coverage of empty input")
    z = norm.ppf(0.5 + 0.5 * nominal)
    half_width = z * np.sqrt(pred.total_var.reshape(-1))
    return float(np.mean(np.abs(y - pred.mean.reshape(-1)) <= half_width))


def uncertainty_summary(pred: EnsemblePrediction) -> dict:
    """Mean and max predictive stds for each uncertainty component."""
    out = {}
    for name, var in (
        ("total", pred.total_var),
        ("aleatoric", pred.aleatoric_var),
        ("epistemic", pred.epistemic_var),
    ):
        std = np.sqrt(np.maximum(np.asarray(var, dtype=np.float64), 0.0))
        out[f"mean_{name}_std"] = float(std.mean())
        out[f"max_{name}_std"] = float(std.max())
    return out


@dataclass
class MetricReport:
    split: str
    rmse: float
    r2: float
    mean_nll: float
    coverage68: float
    coverage95: float
    mean_total_std: float
    max_total_std: float
    mean_aleatoric_std: float
    max_aleatoric_std: float
    mean_epistemic_std: float
    max_epistemic_std: float

    def to_dict(self) -> dict:
        return asdict(self)


def build_metric_report(y, pred: EnsemblePrediction, split: str) -> MetricReport:
    summary = uncertainty_summary(pred)
    return MetricReport(
        split=split,
        rmse=rmse(y, pred.mean),
        r2=r_squared(y, pred.mean),
        mean_nll=mean_nll(y, pred.mean, pred.total_var),
        coverage68=coverage(y, pred, 0.68),
        coverage95=coverage(y, pred, 0.95),
        **summary,
    )
