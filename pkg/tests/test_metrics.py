"""Metric formulas and calibration diagnostics."""

import numpy as np
import pytest
from hypothesis import given, strategies as st

from bode.ensemble import EnsemblePrediction
from bode.metrics import (
    build_metric_report,
    coverage,
    mean_nll,
    r_squared,
    rmse,
)


def ep(mean, total):
    mean = np.asarray(mean, float)
    total = np.asarray(total, float)
    return EnsemblePrediction(mean=mean, total_var=total,
                              aleatoric_var=total / 2, epistemic_var=total / 2,
                              n_members=4)


class TestRmse:
    def test_perfect(self):
        assert rmse([1.0, 2.0], [1.0, 2.0]) == 0.0

    def test_hand_value(self):
        assert rmse([0.0, 0.0], [3.0, 4.0]) == pytest.approx(np.sqrt(12.5))

    @given(st.floats(-100, 100), st.integers(0, 1000))
    def test_scale_equivariance(self, c, seed):
        rng = np.random.default_rng(seed)
        y = rng.standard_normal(20)
        mu = rng.standard_normal(20)
        assert rmse(c * y, c * mu) == pytest.approx(abs(c) * rmse(y, mu), abs=1e-9)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            rmse([], [])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            rmse([1.0], [1.0, 2.0])

    def test_mse_bias_variance_identity(self):
        rng = np.random.default_rng(2)
        y = rng.standard_normal(500)
        mu = y + 0.3 + 0.5 * rng.standard_normal(500)
        resid = y - mu
        mse = rmse(y, mu) ** 2
        assert mse == pytest.approx(resid.mean() ** 2 + resid.var(), rel=1e-10)


class TestR2:
    def test_perfect(self):
        y = np.array([1.0, 2.0, 4.0])
        assert r_squared(y, y) == 1.0

    def test_mean_predictor_zero(self):
        y = np.array([1.0, 2.0, 4.0])
        mu = np.full(3, y.mean())
        assert r_squared(y, mu) == pytest.approx(0.0)

    def test_worse_than_mean_negative(self):
        y = np.array([1.0, 2.0, 4.0])
        assert r_squared(y, -y) < 0

    def test_zero_variance_rejected(self):
        with pytest.raises(ValueError):
            r_squared([2.0, 2.0], [1.0, 3.0])

    def test_relation_to_rmse(self):
        rng = np.random.default_rng(3)
        y = rng.standard_normal(100)
        mu = 0.9 * y + 0.1 * rng.standard_normal(100)
        n = len(y)
        ss_tot = np.sum((y - y.mean()) ** 2)
        assert r_squared(y, mu) == pytest.approx(
            1 - rmse(y, mu) ** 2 * n / ss_tot, rel=1e-10
        )


class TestCoverage:
    def test_huge_variance_full_coverage(self):
        y = np.array([0.0, 10.0, -10.0])
        pred = ep([0.0, 0.0, 0.0], [1e12] * 3)
        assert coverage(y, pred, 0.95) == 1.0

    def test_tiny_variance_zero_coverage(self):
        y = np.array([1.0, 2.0])
        pred = ep([0.0, 0.0], [1e-20, 1e-20])
        assert coverage(y, pred, 0.68) == 0.0

    def test_gaussian_mc_calibration(self):
        rng = np.random.default_rng(4)
        n = 100_000
        mu = rng.standard_normal(n)
        sd = 0.5 + rng.random(n)
        y = mu + sd * rng.standard_normal(n)
        pred = ep(mu, sd**2)
        assert coverage(y, pred, 0.95) == pytest.approx(0.95, abs=0.01)
        assert coverage(y, pred, 0.68) == pytest.approx(0.68, abs=0.01)

    def test_nominal_bounds(self):
        with pytest.raises(ValueError):
            coverage([1.0], ep([1.0], [1.0]), 1.0)


def test_mean_nll_matches_formula():
    y = np.array([1.0, 2.0])
    mean = np.array([1.0, 1.0])
    var = np.array([1.0, 4.0])
    expected = np.mean(0.5 * (np.log(2 * np.pi * var) + (y - mean) ** 2 / var))
    assert mean_nll(y, mean, var) == pytest.approx(expected, rel=1e-12)


def test_metric_report_contents():
    rng = np.random.default_rng(5)
    y = rng.standard_normal(200)
    pred = ep(y + 0.1 * rng.standard_normal(200), np.full(200, 0.01))
    report = build_metric_report(y, pred, "test")
    d = report.to_dict()
    assert d["split"] == "test"
    assert d["rmse"] >= 0
    assert 0 <= d["coverage68"] <= 1 and 0 <= d["coverage95"] <= 1
    assert d["mean_total_std"] == pytest.approx(0.1, rel=1e-6)
    for key in ("mean_aleatoric_std", "max_epistemic_std", "mean_nll", "r2"):
        assert key in d
