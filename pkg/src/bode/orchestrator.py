"""Per-member Sobol-seeded Bayesian optimization and ensemble assembly.

Each ensemble member runs its own independent search: N0 Sobol trials seed
the surrogate's prior (member m skips ``1 + m*N0`` points, so members get
consecutive disjoint Sobol blocks and nobody starts at the all-zeros
corner), then N_A rounds of fit-surrogate / propose / evaluate.  The
winning configuration of each member (lowest validation RMSE over all its
trials) is retrained on the full training split to form the ensemble.

Failed or non-finite trials are recorded with RMSE = +inf and excluded from
surrogate fitting; the surrogate is refit from the full finite history at
every round.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .acquisition import propose_next
from .ensemble import train_bode_ensemble
from .gp import fit_gp
from .hyperspace import DIMENSION, HyperConfig, decode
from .network import DenseNetSpec, TrainResult, train
from .quasirand import init_sobol
from .seeds import child_seed

PHASE_SOBOL = "sobol"
PHASE_BO = "bo"


class OrchestrationError(RuntimeError):
    """Every trial of a member failed; no usable configuration exists."""

    def __init__(self, message, log=None):
        super().__init__(message)
        self.log = log


@dataclass
class Trial:
    iteration: int
    phase: str
    unit_point: np.ndarray
    config: HyperConfig
    rmse: float
    wall_time_s: float
    error: str | None = None


@dataclass
class TrialLog:
    member_index: int
    n_sobol: int
    n_bo: int
    trials: list[Trial] = field(default_factory=list)

    def finite(self) -> list[Trial]:
        return [t for t in self.trials if np.isfinite(t.rmse)]

    def unit_points(self) -> np.ndarray:
        return np.array([t.unit_point for t in self.finite()])

    def best(self) -> Trial:
        finite = self.finite()
        if not finite:
            raise OrchestrationError(
                f"member {self.member_index}: all {len(self.trials)} trials failed",
                log=self,
            )
        return min(finite, key=lambda t: (t.rmse, t.iteration))

    def running_min(self) -> list[float]:
        out, best = [], np.inf
        for t in self.trials:
            best = min(best, t.rmse)
            out.append(best)
        return out

    def records(self) -> list[dict]:
        """JSON-lines records, one per trial."""
        recs = []
        for t in self.trials:
            rec = {
                "member": self.member_index,
                "iter": t.iteration,
                "phase": t.phase,
                "config": t.config.to_dict(),
                "rmse": t.rmse if np.isfinite(t.rmse) else None,
                "wall_time_s": t.wall_time_s,
            }
            if t.error:
                rec["error"] = t.error
            recs.append(rec)
        return recs


def run_member_bo(trial_fn, n_sobol: int, n_bo: int, member_seed: int,
                  member_index: int = 0, n_raw: int = 512,
                  n_mc_samples: int = 256,
                  sobol_skip: int | None = None) -> tuple[HyperConfig, TrialLog]:
    """One member's full search; returns its best config and trial history.

    ``trial_fn(config, seed) -> float`` trains a model under ``config`` and
    returns the validation RMSE (raw units).  Exceptions and non-finite
    values are recorded as failed trials.  ``sobol_skip`` overrides the
    member's default stream offset (paired search studies share one stream).
    """
    if n_sobol < 2:
        raise ValueError("need at least 2 Sobol trials to seed the surrogate")
    if sobol_skip is None:
        sobol_skip = 1 + member_index * n_sobol
    gen = init_sobol(DIMENSION, seed_skip=sobol_skip)
    log = TrialLog(member_index=member_index, n_sobol=n_sobol, n_bo=n_bo)

    for i in range(n_sobol + n_bo):
        t0 = time.perf_counter()
        if i < n_sobol:
            phase = PHASE_SOBOL
            u = gen.next_point()
        else:
            phase = PHASE_BO
            finite = log.finite()
            if len(finite) >= 2:
                pts = np.array([t.unit_point for t in finite])
                vals = np.array([t.rmse for t in finite])
                gp = fit_gp((pts, vals), seed=child_seed(member_seed, "gp", i))
                u = propose_next(
                    gp, pts, n_raw=n_raw, seed=child_seed(member_seed, "propose", i),
                    n_mc_samples=n_mc_samples,
                )
            else:
                # not enough survivors to fit a surrogate; keep exploring
                u = gen.next_point()
        cfg = decode(u)
        err = None
        try:
            value = float(trial_fn(cfg, child_seed(member_seed, "trial", i)))
            if not np.isfinite(value):
                value, err = np.inf, "non-finite validation RMSE"
        except Exception as exc:  # single-trial failure: record and continue
            value, err = np.inf, f"{type(exc).__name__}: {exc}"
        log.trials.append(
            Trial(iteration=i, phase=phase, unit_point=u, config=cfg,
                  rmse=value, wall_time_s=time.perf_counter() - t0, error=err)
        )
    return log.best().config, log


def make_field_trial_fn(bo_train, bo_val, input_dim: int, epochs_per_trial: int,
                        dtype=np.float32):
    """Trial objective for field data: train on bo_train, score on bo_val.

    The score is the final-epoch validation RMSE in raw target units against
    the fixed evaluation targets of ``bo_val``.
    """
    injector = bo_train.make_injector() if hasattr(bo_train, "make_injector") else None

    def trial_fn(cfg: HyperConfig, seed: int) -> float:
        spec = DenseNetSpec.from_config(input_dim, cfg)
        result = train(spec, bo_train, bo_val, cfg, epochs=epochs_per_trial,
                       seed=seed, noise_injector=injector, dtype=dtype)
        if result.state.aborted or not result.val_rmse:
            return np.inf
        return result.val_rmse[-1]

    return trial_fn


def assert_no_test_leakage(data) -> None:
    """Split-ledger assertion: optimization data must avoid the test split."""
    ds = getattr(data, "ds", None)
    timesteps = getattr(data, "timesteps", None)
    if ds is None or timesteps is None:
        return
    leaked = set(timesteps) & set(ds.splits.test)
    if leaked:
        raise OrchestrationError(f"optimization would touch test timesteps {sorted(leaked)}")


@dataclass
class BodeResult:
    configs: list[HyperConfig]
    logs: list[TrialLog]
    members: list[TrainResult]


def run_bode(bo_train, bo_val, train_data, val_data, input_dim: int,
             m_ensemble: int, n_sobol: int, n_bo: int, master_seed: int,
             epochs_per_trial: int, final_epochs: int, dtype=np.float32,
             n_raw: int = 512, n_mc_samples: int = 256,
             member_outcomes=None) -> BodeResult:
    """Full pipeline: M independent member searches, then winner retraining.

    ``member_outcomes`` may carry precomputed ``(config, TrialLog)`` pairs
    (e.g. from a process pool); members are recomputed here otherwise.
    """
    for data in (bo_train, bo_val):
        assert_no_test_leakage(data)
    if member_outcomes is None:
        trial_fn = make_field_trial_fn(bo_train, bo_val, input_dim,
                                       epochs_per_trial, dtype=dtype)
        member_outcomes = [
            run_member_bo(trial_fn, n_sobol, n_bo,
                          member_seed=child_seed(master_seed, "member", m),
                          member_index=m, n_raw=n_raw, n_mc_samples=n_mc_samples)
            for m in range(m_ensemble)
        ]
    configs = [cfg for cfg, _ in member_outcomes]
    logs = [log for _, log in member_outcomes]
    seeds = [child_seed(master_seed, "final", m) for m in range(m_ensemble)]
    injector_factory = getattr(train_data, "make_injector", None)
    members = train_bode_ensemble(
        train_data, val_data, configs, seeds, epochs=final_epochs,
        input_dim=input_dim, noise_injector_factory=injector_factory, dtype=dtype,
    )
    return BodeResult(configs=configs, logs=logs, members=members)
