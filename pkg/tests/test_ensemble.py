"""Ensemble aggregation and the uncertainty decomposition identity."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bode.ensemble import (
    aggregate,
    member_prediction_raw,
    member_seeds,
    train_baseline_ensemble,
    train_bode_ensemble,
)
from bode.hyperspace import HyperConfig
from bode.network import DenseNet, DenseNetSpec, MemberPrediction
from bode.toydata import sine_benchmark


def mp(mean, var):
    return MemberPrediction(mean=np.asarray(mean, float), variance=np.asarray(var, float))


class TestAggregate:
    def test_identical_members_have_zero_epistemic(self):
        m = mp([1.0, -2.0, 0.5], [0.1, 0.2, 0.3])
        pred = aggregate([m, m, m])
        assert np.allclose(pred.epistemic_var, 0.0)
        assert np.allclose(pred.total_var, pred.aleatoric_var)
        assert np.allclose(pred.aleatoric_var, [0.1, 0.2, 0.3])

    def test_two_member_hand_calculation(self):
        eps = 1e-6
        pred = aggregate([mp([0.0], [eps]), mp([2.0], [eps])])
        assert pred.mean[0] == pytest.approx(1.0)
        assert pred.epistemic_var[0] == pytest.approx(1.0)
        assert pred.aleatoric_var[0] == pytest.approx(eps)
        assert pred.total_var[0] == pytest.approx(1.0 + eps)

    def test_duplicated_member_degenerate_law(self):
        m = mp([0.3, 1.7], [0.05, 0.4])
        pred = aggregate([m] * 7)
        assert np.allclose(pred.epistemic_var, 0.0)
        assert np.allclose(pred.total_var, m.variance)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(0)
        members = [mp(rng.standard_normal(6), rng.random(6) + 0.01) for _ in range(5)]
        a = aggregate(members)
        b = aggregate(members[::-1])
        assert np.allclose(a.mean, b.mean)
        assert np.allclose(a.total_var, b.total_var)

    def test_needs_two_members(self):
        with pytest.raises(ValueError):
            aggregate([mp([1.0], [0.1])])

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            aggregate([mp([1.0], [0.1]), mp([1.0, 2.0], [0.1, 0.1])])


@settings(max_examples=200, deadline=None)
@given(
    st.integers(2, 20),
    st.integers(1, 30),
    st.integers(0, 2**32 - 1),
)
def test_decomposition_identity_property(n_members, n_points, seed):
    rng = np.random.default_rng(seed)
    members = [
        mp(rng.standard_normal(n_points) * 10,
           rng.random(n_points) * 5 + 1e-8)
        for _ in range(n_members)
    ]
    pred = aggregate(members)
    gap = pred.total_var - pred.aleatoric_var - pred.epistemic_var
    scale = np.maximum(np.abs(pred.total_var), 1e-30)
    assert np.all(np.abs(gap) / scale < 1e-10)
    assert np.all(pred.epistemic_var >= 0)
    assert np.all(pred.aleatoric_var > 0)


class TestEnsembleTraining:
    def test_equal_seeds_degenerate(self):
        train_d, val_d = sine_benchmark(120, seed=0)
        results = train_baseline_ensemble(train_d, val_d, seeds=[5, 5],
                                          epochs=3, input_dim=1)
        x, _ = val_d.all_rows()
        preds = [r.state.net.forward(x) for r in results]
        pred = aggregate(preds)
        assert np.allclose(pred.epistemic_var, 0.0)

    def test_distinct_seeds_spread(self):
        train_d, val_d = sine_benchmark(200, seed=1)
        results = train_baseline_ensemble(train_d, val_d, seeds=list(range(5)),
                                          epochs=30, input_dim=1)
        x, _ = val_d.all_rows()
        pred = aggregate([r.state.net.forward(x) for r in results])
        assert np.mean(pred.epistemic_var) > 0

    def test_config_seed_length_mismatch(self):
        train_d, val_d = sine_benchmark(100, seed=0)
        cfg = HyperConfig(learning_rate=1e-3, weight_decay=1e-4, drop_rate=0.0,
                          batch_size=32, n_dense_blocks=3, layers_per_block=3,
                          growth_rate=8, initial_features=8)
        with pytest.raises(ValueError):
            train_bode_ensemble(train_d, val_d, [cfg, cfg], [1], epochs=2, input_dim=1)

    def test_equal_configs_and_seeds_degenerate(self):
        train_d, val_d = sine_benchmark(100, seed=0)
        cfg = HyperConfig(learning_rate=1e-3, weight_decay=1e-4, drop_rate=0.0,
                          batch_size=32, n_dense_blocks=3, layers_per_block=3,
                          growth_rate=8, initial_features=8)
        results = train_bode_ensemble(train_d, val_d, [cfg, cfg], [3, 3],
                                      epochs=3, input_dim=1)
        x, _ = val_d.all_rows()
        pred = aggregate([r.state.net.forward(x) for r in results])
        assert np.allclose(pred.epistemic_var, 0.0)


def test_member_prediction_raw_denormalization():
    spec = DenseNetSpec(input_dim=2, n_dense_blocks=1, block_layers=(2,),
                        growth_rate=4, initial_features=4, drop_rate=0.0)
    net = DenseNet.initialize(spec, seed=0)
    x = np.random.default_rng(1).random((12, 2)).astype(np.float32)
    norm = net.forward(x)
    raw = member_prediction_raw(net, x, (5.0, 2.0))
    assert np.allclose(raw.mean, norm.mean.astype(np.float64) * 2.0 + 5.0, atol=1e-6)
    assert np.allclose(raw.variance, norm.variance.astype(np.float64) * 4.0, atol=1e-6)


def test_member_seeds_stable():
    assert member_seeds(7, "baseline", 3) == member_seeds(7, "baseline", 3)
    assert member_seeds(7, "baseline", 3) != member_seeds(8, "baseline", 3)
