"""Monte-Carlo noisy expected improvement and proposal of the next trial.

The objective is minimized, so improvement of a candidate over the incumbent
set is ``max(min(baseline samples) - candidate sample, 0)`` averaged over
joint posterior draws; sampling jointly makes the score robust to noisy
observations of the baselines (their "best value" is itself uncertain).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gp import GpModel, joint_posterior_samples
from .quasirand import init_sobol
from .seeds import child_seed

DEFAULT_MC_SAMPLES = 256
DEFAULT_RAW = 512
DEFAULT_REFINE = 4
REFINE_STEPS = 32
REFINE_STEP_SIZE = 0.05


@dataclass(frozen=True)
class AcquisitionEval:
    candidate: np.ndarray
    score: float
    n_mc_samples: int


def qnei_score(model: GpModel, candidate, baseline_points,
               n_mc_samples: int = DEFAULT_MC_SAMPLES, seed: int = 0) -> AcquisitionEval:
    """Noisy expected improvement of one candidate over observed baselines."""
    candidate = np.asarray(candidate, dtype=float)
    baselines = np.atleast_2d(np.asarray(baseline_points, dtype=float))
    if len(baselines) == 0:
        raise ValueError("baseline_points must be nonempty")
    pts = np.vstack([candidate[None, :], baselines])
    samples = joint_posterior_samples(model, pts, n_mc_samples, seed)
    improvement = np.maximum(samples[:, 1:].min(axis=1) - samples[:, 0], 0.0)
    return AcquisitionEval(
        candidate=candidate,
        score=float(np.mean(improvement)),
        n_mc_samples=n_mc_samples,
    )


def _observed_points(trials) -> np.ndarray:
    pts = getattr(trials, "unit_points", None)
    if callable(pts):
        pts = pts()
    if pts is None:
        pts = trials
    return np.atleast_2d(np.asarray(pts, dtype=float))


def propose_next(model: GpModel, trials, n_raw: int = DEFAULT_RAW,
                 n_refine: int = DEFAULT_REFINE, seed: int = 0,
                 n_mc_samples: int = DEFAULT_MC_SAMPLES,
                 return_details: bool = False) -> np.ndarray:
    """Pick the next point: Sobol raw sweep, then coordinate hill-climbing.

    Scores ``n_raw`` Sobol candidates with independent per-candidate MC
    streams (so enlarging the sweep only ever adds candidates), refines the
    ``n_refine`` best by greedy coordinate perturbation with step halving,
    and returns the overall argmax.  Ties break to the lowest candidate
    index.  Deterministic under ``seed``.  With ``return_details`` the raw
    sweep scores come back too.
    """
    baselines = _observed_points(trials)
    dim = model.dimension
    candidates = init_sobol(dim, seed_skip=1).take(n_raw)

    scores = np.empty(n_raw)
    for i, cand in enumerate(candidates):
        scores[i] = qnei_score(
            model, cand, baselines, n_mc_samples, seed=child_seed(seed, "raw", i)
        ).score

    order = np.argsort(-scores, kind="stable")
    best_point = candidates[order[0]]
    best_score = scores[order[0]]

    for rank in range(min(n_refine, n_raw)):
        idx = int(order[rank])
        point = candidates[idx].copy()
        refine_seed = child_seed(seed, "refine", idx)
        # common random numbers within one refinement for low-noise comparisons
        score = qnei_score(model, point, baselines, n_mc_samples, seed=refine_seed).score
        step = REFINE_STEP_SIZE
        for it in range(REFINE_STEPS):
            coord = it % dim
            moved = False
            for sign in (1.0, -1.0):
                trial_point = point.copy()
                trial_point[coord] = min(1.0, max(0.0, trial_point[coord] + sign * step))
                trial_score = qnei_score(
                    model, trial_point, baselines, n_mc_samples, seed=refine_seed
                ).score
                if trial_score > score:
                    point, score = trial_point, trial_score
                    moved = True
                    break
            if not moved:
                step *= 0.5
                if step < 1e-3:
                    break
        if score > best_score:
            best_point, best_score = point, score
    if return_details:
        return best_point, scores
    return best_point
