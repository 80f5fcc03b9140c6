"""Parity between the compiled kernel core and the numpy fallback."""

import numpy as np
import pytest

from bode._kernels import _py

cy = pytest.importorskip("bode._kernels._corecy",
                         reason="compiled kernel core not built")

DTYPES = [np.float32, np.float64]


def _rand(rng, n, dtype, lo=-3.0, hi=3.0):
    return (lo + (hi - lo) * rng.random(n)).astype(dtype)


@pytest.mark.parametrize("dtype", DTYPES)
def test_relu_parity(dtype):
    rng = np.random.default_rng(0)
    x = _rand(rng, 1000, dtype)
    a, b = x.copy(), x.copy()
    cy.relu_(a)
    _py.relu_(b)
    assert np.array_equal(a, b)
    assert np.all(a >= 0)


@pytest.mark.parametrize("dtype", DTYPES)
def test_relu_dropout_parity(dtype):
    rng = np.random.default_rng(1)
    x = _rand(rng, 1000, dtype)
    u = rng.random(1000).astype(dtype)
    a, b = x.copy(), x.copy()
    cy.relu_dropout_(a, u, 0.7)
    _py.relu_dropout_(b, u, 0.7)
    assert np.array_equal(a, b)


@pytest.mark.parametrize("dtype", DTYPES)
def test_backprop_mask_parity(dtype):
    rng = np.random.default_rng(2)
    g = _rand(rng, 1000, dtype)
    act = _rand(rng, 1000, dtype, lo=-1, hi=1)
    a, b = g.copy(), g.copy()
    cy.backprop_mask_(a, act, 0.8)
    _py.backprop_mask_(b, act, 0.8)
    assert np.array_equal(a, b)


@pytest.mark.parametrize("dtype", DTYPES)
def test_softplus_parity(dtype):
    rng = np.random.default_rng(3)
    raw = _rand(rng, 1000, dtype, lo=-30, hi=30)
    a = np.empty_like(raw)
    b = np.empty_like(raw)
    cy.softplus_floor(raw, a, 1e-8)
    _py.softplus_floor(raw, b, 1e-8)
    tol = 1e-6 if dtype == np.float32 else 1e-14
    assert np.allclose(a, b, rtol=tol, atol=tol)
    assert np.all(a > 0)


@pytest.mark.parametrize("dtype", DTYPES)
def test_sigmoid_scale_parity(dtype):
    rng = np.random.default_rng(4)
    dvar = _rand(rng, 500, dtype)
    raw = _rand(rng, 500, dtype, lo=-20, hi=20)
    a, b = dvar.copy(), dvar.copy()
    cy.sigmoid_scale_(a, raw)
    _py.sigmoid_scale_(b, raw)
    tol = 1e-6 if dtype == np.float32 else 1e-14
    assert np.allclose(a, b, rtol=tol, atol=tol)


@pytest.mark.parametrize("dtype", DTYPES)
@pytest.mark.parametrize("scale", [1.0, 0.125])
def test_gaussian_nll_parity(dtype, scale):
    rng = np.random.default_rng(5)
    n = 800
    mu = _rand(rng, n, dtype)
    var = (0.05 + rng.random(n)).astype(dtype)
    y = _rand(rng, n, dtype)
    dmu_a = np.empty_like(mu); dvar_a = np.empty_like(mu)
    dmu_b = np.empty_like(mu); dvar_b = np.empty_like(mu)
    la = cy.gaussian_nll(mu, var, y, dmu_a, dvar_a, scale)
    lb = _py.gaussian_nll(mu, var, y, dmu_b, dvar_b, scale)
    tol = 1e-5 if dtype == np.float32 else 1e-12
    assert la == pytest.approx(lb, rel=tol)
    assert np.allclose(dmu_a, dmu_b, rtol=tol, atol=tol)
    assert np.allclose(dvar_a, dvar_b, rtol=tol, atol=tol)


@pytest.mark.parametrize("dtype", DTYPES)
def test_adamw_parity_and_reference(dtype):
    rng = np.random.default_rng(6)
    n = 700
    p0 = _rand(rng, n, dtype)
    g = _rand(rng, n, dtype)
    m0 = np.zeros(n, dtype=dtype)
    v0 = np.zeros(n, dtype=dtype)

    lr, b1, b2, eps, wd = 1e-3, 0.9, 0.999, 1e-8, 0.01
    args = (lr, b1, b2, eps, wd, 1 - b1**1, 1 - b2**1)

    pa, ma, va = p0.copy(), m0.copy(), v0.copy()
    cy.adamw_(pa, g, ma, va, *args)
    pb, mb, vb = p0.copy(), m0.copy(), v0.copy()
    _py.adamw_(pb, g, mb, vb, *args)
    tol = 1e-6 if dtype == np.float32 else 1e-14
    assert np.allclose(pa, pb, rtol=tol, atol=tol)
    assert np.allclose(ma, mb, rtol=tol, atol=tol)
    assert np.allclose(va, vb, rtol=tol, atol=tol)

    # plain-numpy reference in float64
    m = 0.9 * m0.astype(np.float64) + 0.1 * g.astype(np.float64)
    v = 0.999 * v0.astype(np.float64) + 0.001 * g.astype(np.float64) ** 2
    update = (m / (1 - 0.9)) / (np.sqrt(v / (1 - 0.999)) + eps) + wd * p0.astype(np.float64)
    ref = p0.astype(np.float64) - lr * update
    assert np.allclose(pa, ref, rtol=1e-5, atol=1e-5)


def test_backend_selection_env(monkeypatch):
    import importlib
    import bode._kernels as K

    monkeypatch.setenv("BODE_PURE_PYTHON", "1")
    mod = importlib.reload(K)
    assert mod.backend_name() == "python"
    monkeypatch.delenv("BODE_PURE_PYTHON")
    mod = importlib.reload(K)
    assert mod.backend_name() == "cython"
