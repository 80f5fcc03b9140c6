"""Gaussian-process regression over the unit hypercube.

The surrogate approximates the optimization objective (validation RMSE as a
function of encoded hyperparameters) with a squared-exponential kernel,
per-dimension (ARD) lengthscales and a learned observation-noise term.
Targets are standardized inside the model so the acquisition layer always
works on unit-scale values; de-standardized accessors are provided.

Kernel hyperparameters are set by maximizing the log marginal likelihood with
multi-start coordinate descent in log-parameter space: derivative-free,
bounded, and deterministic under a restart seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

LENGTHSCALE_BOUNDS = (0.1, 10.0)
SIGNAL_BOUNDS = (0.05, 20.0)
NOISE_BOUNDS = (1e-6, 1.0)
JITTER_MAX = 1e-4
N_RESTARTS = 8


class GpFitError(RuntimeError):
    """Kernel matrix stayed non-positive-definite after jitter escalation."""


def rbf_kernel(x, x_other, lengthscales, signal_variance: float = 1.0) -> float:
    """Squared-exponential covariance between two points.

    ``signal_variance * exp(-sum_d (x_d - x'_d)^2 / (2 l_d^2))`` with either a
    scalar (isotropic) or per-dimension lengthscale.
    """
    x = np.asarray(x, dtype=float)
    x_other = np.asarray(x_other, dtype=float)
    if x.shape != x_other.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {x_other.shape}")
    ls = np.broadcast_to(np.asarray(lengthscales, dtype=float), x.shape)
    if np.any(ls <= 0) or signal_variance < 0:
        raise ValueError("lengthscales must be positive")
    d = (x - x_other) / ls
    return float(signal_variance * np.exp(-0.5 * np.dot(d, d)))


def _kernel_matrix(xa, xb, lengthscales, signal_variance):
    sa = xa / lengthscales
    sb = xb / lengthscales
    sq = (
        np.sum(sa**2, axis=1)[:, None]
        + np.sum(sb**2, axis=1)[None, :]
        - 2.0 * sa @ sb.T
    )
    np.maximum(sq, 0.0, out=sq)
    return signal_variance * np.exp(-0.5 * sq)


def _chol_with_jitter(k, base_jitter):
    """Lower Cholesky factor of k + jitter*I, escalating jitter x10 up to JITTER_MAX."""
    jitter = max(base_jitter, 0.0)
    while True:
        try:
            shifted = k if jitter == 0 else k + jitter * np.eye(k.shape[0])
            return cholesky(shifted, lower=True), jitter
        except np.linalg.LinAlgError:
            pass
        except ValueError:
            pass
        jitter = 1e-10 if jitter == 0 else jitter * 10.0
        if jitter > JITTER_MAX:
            raise GpFitError(
                "kernel matrix is not positive definite even with jitter "
                f"{JITTER_MAX:g}; conditioning failure"
            )


@dataclass(frozen=True)
class PosteriorBelief:
    """Gaussian belief about the objective at one point (standardized units)."""

    mean: float
    variance: float
    target_mean: float
    target_std: float

    def mean_raw(self) -> float:
        return self.mean * self.target_std + self.target_mean

    def variance_raw(self) -> float:
        return self.variance * self.target_std**2


@dataclass
class GpModel:
    train_inputs: np.ndarray       # (n, d) unit-cube points
    train_targets: np.ndarray      # (n,) standardized
    lengthscales: np.ndarray       # (d,) ARD
    signal_variance: float
    noise_variance: float
    cholesky_factor: np.ndarray    # lower factor of K + noise*I (+ jitter)
    alpha: np.ndarray              # (K + noise*I)^-1 y
    target_mean: float
    target_std: float
    log_marginal: float
    jitter: float

    @property
    def dimension(self) -> int:
        return self.train_inputs.shape[1]


def _log_marginal(x, y, lengthscales, signal, noise, jitter):
    k = _kernel_matrix(x, x, lengthscales, signal)
    k[np.diag_indices_from(k)] += noise
    try:
        chol, _ = _chol_with_jitter(k, jitter)
    except GpFitError:
        return -np.inf, None, None
    alpha = cho_solve((chol, True), y)
    n = len(y)
    ll = (
        -0.5 * float(y @ alpha)
        - float(np.sum(np.log(np.diag(chol))))
        - 0.5 * n * np.log(2.0 * np.pi)
    )
    return ll, chol, alpha


def _clip_theta(theta, d):
    lo = np.log(np.array([LENGTHSCALE_BOUNDS[0]] * d + [SIGNAL_BOUNDS[0], NOISE_BOUNDS[0]]))
    hi = np.log(np.array([LENGTHSCALE_BOUNDS[1]] * d + [SIGNAL_BOUNDS[1], NOISE_BOUNDS[1]]))
    return np.clip(theta, lo, hi)


def fit_gp(trials, jitter: float = 1e-10, seed: int = 0,
           n_restarts: int = N_RESTARTS, max_sweeps: int = 10) -> GpModel:
    """Fit kernel hyperparameters to observed (point, objective) pairs.

    Parameters
    ----------
    trials : sequence of (point, value) pairs, or an (X, y) tuple of arrays.
    jitter : base diagonal jitter; escalated x10 on Cholesky failure up to 1e-4.
    seed : restart seed; identical seeds give identical fits.
    """
    if isinstance(trials, tuple) and len(trials) == 2:
        x = np.asarray(trials[0], dtype=float)
        y = np.asarray(trials[1], dtype=float)
    else:
        x = np.asarray([p for p, _ in trials], dtype=float)
        y = np.asarray([v for _, v in trials], dtype=float)
    if x.ndim != 2 or len(x) != len(y):
        raise ValueError("trials must provide matching points and objective values")
    if len(y) < 2:
        raise ValueError("need at least 2 trials to fit a GP")
    if np.any(x < 0.0) or np.any(x > 1.0):
        raise ValueError("training points must lie in the unit cube")
    if not np.all(np.isfinite(y)):
        raise ValueError("objective values must be finite")

    target_mean = float(np.mean(y))
    target_std = float(np.std(y))
    if target_std == 0.0:
        target_std = 1.0
    y_std = (y - target_mean) / target_std

    n, d = x.shape
    rng = np.random.default_rng(seed)

    def objective(theta):
        ls = np.exp(theta[:d])
        signal = float(np.exp(theta[d]))
        noise = float(np.exp(theta[d + 1]))
        ll, _, _ = _log_marginal(x, y_std, ls, signal, noise, jitter)
        return ll

    # start 0 is a fixed heuristic, the rest log-uniform within bounds
    starts = [np.log(np.array([0.5] * d + [1.0, 1e-2]))]
    lo = np.log(np.array([LENGTHSCALE_BOUNDS[0]] * d + [SIGNAL_BOUNDS[0], NOISE_BOUNDS[0]]))
    hi = np.log(np.array([LENGTHSCALE_BOUNDS[1]] * d + [SIGNAL_BOUNDS[1], NOISE_BOUNDS[1]]))
    for _ in range(n_restarts - 1):
        starts.append(lo + rng.random(d + 2) * (hi - lo))

    best_theta, best_ll = None, -np.inf
    for theta0 in starts:
        theta = _clip_theta(theta0.copy(), d)
        ll = objective(theta)
        steps = np.full(d + 2, 0.5)
        for _ in range(max_sweeps):
            improved = False
            for i in range(d + 2):
                if steps[i] < 1e-3:
                    continue
                for sign in (1.0, -1.0):
                    cand = theta.copy()
                    cand[i] += sign * steps[i]
                    cand = _clip_theta(cand, d)
                    cand_ll = objective(cand)
                    if cand_ll > ll:
                        theta, ll = cand, cand_ll
                        improved = True
                        break
                else:
                    steps[i] *= 0.5
            if not improved and np.all(steps < 1e-3):
                break
        if ll > best_ll:
            best_ll, best_theta = ll, theta

    if best_theta is None or not np.isfinite(best_ll):
        raise GpFitError("no hyperparameter setting produced a positive-definite kernel")

    ls = np.exp(best_theta[:d])
    signal = float(np.exp(best_theta[d]))
    noise = float(np.exp(best_theta[d + 1]))

    k = _kernel_matrix(x, x, ls, signal)
    k[np.diag_indices_from(k)] += noise
    chol, used_jitter = _chol_with_jitter(k, jitter)
    alpha = cho_solve((chol, True), y_std)
    return GpModel(
        train_inputs=x,
        train_targets=y_std,
        lengthscales=ls,
        signal_variance=signal,
        noise_variance=noise,
        cholesky_factor=chol,
        alpha=alpha,
        target_mean=target_mean,
        target_std=target_std,
        log_marginal=best_ll,
        jitter=used_jitter,
    )


def posterior(model: GpModel, x) -> PosteriorBelief:
    """Latent posterior mean/variance at one query point."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    kstar = _kernel_matrix(model.train_inputs, x, model.lengthscales,
                           model.signal_variance)[:, 0]
    mean = float(kstar @ model.alpha)
    v = solve_triangular(model.cholesky_factor, kstar, lower=True)
    var = model.signal_variance - float(v @ v)
    return PosteriorBelief(
        mean=mean,
        variance=max(var, 0.0),
        target_mean=model.target_mean,
        target_std=model.target_std,
    )


def joint_posterior_samples(model: GpModel, candidates, n_samples: int,
                            seed: int) -> np.ndarray:
    """Draw joint latent posterior samples over a candidate set.

    Returns an (n_samples, n_candidates) matrix in standardized objective
    units, reproducible under ``seed``.
    """
    pts = np.atleast_2d(np.asarray(candidates, dtype=float))
    if len(pts) == 0:
        raise ValueError("candidate set must be nonempty")
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    kxs = _kernel_matrix(model.train_inputs, pts, model.lengthscales,
                         model.signal_variance)
    kss = _kernel_matrix(pts, pts, model.lengthscales, model.signal_variance)
    mean = kxs.T @ model.alpha
    v = solve_triangular(model.cholesky_factor, kxs, lower=True)
    cov = kss - v.T @ v
    cov = 0.5 * (cov + cov.T)
    try:
        chol, _ = _chol_with_jitter(cov, 1e-12)
    except GpFitError as exc:
        raise GpFitError(f"joint covariance over candidate set not PSD: {exc}") from exc
    z = np.random.default_rng(seed).standard_normal((n_samples, len(pts)))
    return mean[None, :] + z @ chol.T
