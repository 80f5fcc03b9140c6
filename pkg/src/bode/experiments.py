"""End-to-end experiment recipes behind the CLI commands.

A run directory contains: ``manifest.json`` (resolved config, re-runnable),
``report.json`` (metrics; bit-identical across re-runs from the manifest),
``predictions.csv`` and ``uncertainty.csv`` on the test frames,
``members/*.ckpt`` checkpoints, and for optimization runs ``trials.jsonl``.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, _kernels
from .ensemble import aggregate, member_prediction_raw, train_baseline_ensemble
from .fielddata import FieldDataset, FrameData, NoiseSpec, load_dataset
from .hyperspace import BASELINE, HyperConfig
from .metrics import build_metric_report, rmse
from .network import DenseNet, DenseNetSpec, train, save_checkpoint
from .orchestrator import make_field_trial_fn, run_bode, run_member_bo
from .reporting import (
    ensemble_csv_arrays,
    read_csv_columns,
    read_json,
    write_json,
    write_predictions_csv,
    write_trials_jsonl,
    write_uncertainty_csv,
    PREDICTIONS_HEADER,
    UNCERTAINTY_HEADER,
)
from .seeds import child_seed


def make_noise_spec(sigma: float, filter_width: float, master_seed: int) -> NoiseSpec | None:
    if sigma <= 0:
        return None
    return NoiseSpec(sigma=sigma, filter_width=filter_width,
                     seed=child_seed(master_seed, "noise"))


def _evaluate_split(ds: FieldDataset, nets: list[DenseNet], noise, timesteps,
                    split_name: str, cell_stride: int = 1):
    data = FrameData(ds, timesteps, noise=noise, cell_stride=cell_stride)
    x_norm, _ = data.all_rows()
    members = [member_prediction_raw(net, x_norm, ds.target_stats) for net in nets]
    pred = aggregate(members)
    y_obs = data.observed_raw_targets().reshape(-1)
    y_clean = data.clean_raw_targets().reshape(-1)
    report = build_metric_report(y_obs, pred, split_name)
    return data, pred, y_obs, y_clean, report


def _noise_recovery(pred, y_clean, noise: NoiseSpec | None) -> dict | None:
    """Domain-averaged predicted total std vs domain-averaged injected std.

    The injected per-cell noise std is sigma * clean_target (proportional
    noise), so the reference level is sigma times the mean clean target.
    """
    if noise is None:
        return None
    injected = float(noise.sigma * np.mean(y_clean))
    recovered = float(np.mean(np.sqrt(np.maximum(pred.total_var, 0.0))))
    return {
        "sigma": noise.sigma,
        "filter_width": noise.filter_width,
        "injected_mean_std": injected,
        "recovered_mean_total_std": recovered,
        "recovery_ratio": recovered / injected if injected > 0 else float("inf"),
    }


def _member_summaries(results, configs=None, seeds=None) -> list[dict]:
    out = []
    for i, res in enumerate(results):
        entry = {
            "index": i,
            "seed": seeds[i] if seeds else None,
            "final_train_rmse": res.train_rmse[-1] if res.train_rmse else None,
            "final_val_rmse": res.val_rmse[-1] if res.val_rmse else None,
            "epochs_completed": res.state.epoch,
            "aborted": res.state.aborted,
        }
        if configs is not None:
            entry["config"] = configs[i].to_dict()
        out.append(entry)
    return out


def _emit_run_artifacts(out_dir: Path, ds: FieldDataset, nets, noise, report: dict,
                        configs_for_ckpt, seeds) -> dict:
    """Test-split evaluation, CSV exports, checkpoints; extends the report."""
    test_data, pred, y_obs, y_clean, test_metrics = _evaluate_split(
        ds, nets, noise, ds.splits.test, "test", cell_stride=1
    )
    x, z, t = ensemble_csv_arrays(
        test_data.cell_xz(), test_data.frame_times(), len(test_data.timesteps)
    )
    write_predictions_csv(out_dir / "predictions.csv", x, z, t, y_obs, pred.mean)
    write_uncertainty_csv(out_dir / "uncertainty.csv", x, z, t, pred)

    members_dir = out_dir / "members"
    members_dir.mkdir(exist_ok=True)
    for i, net in enumerate(nets):
        cfg = configs_for_ckpt[i]
        save_checkpoint(members_dir / f"member_{i:02d}.ckpt", net,
                        cfg.to_dict() if hasattr(cfg, "to_dict") else dict(cfg),
                        seeds[i])

    report["metrics"] = {"test": test_metrics.to_dict()}
    report["clean"] = {"test_rmse_vs_clean": rmse(y_clean, pred.mean)}
    report["dataset"]["test_target_rms"] = ds.target_rms(ds.splits.test)
    recovery = _noise_recovery(pred, y_clean, noise)
    report["noise"] = recovery
    write_json(out_dir / "report.json", report)
    return report


def _dataset_block(ds: FieldDataset, dataset_dir) -> dict:
    return {
        "path": str(dataset_dir),
        "nx": ds.nx,
        "nz": ds.nz,
        "n_timesteps": ds.n_timesteps,
        "seed": ds.seed,
        "split_sizes": {k: len(v) for k, v in ds.splits.to_dict().items()},
    }


def run_baseline_experiment(dataset_dir, out_dir, *, members: int, epochs: int,
                            seed: int, noise_sigma: float = 0.0,
                            filter_width: float = 2.0, train_cell_stride: int = 1,
                            dtype: str = "float32", jobs: int = 1) -> dict:
    ds = load_dataset(dataset_dir)
    out_dir = Path(out_dir)
    noise = make_noise_spec(noise_sigma, filter_width, seed)
    seeds = [child_seed(seed, "baseline", i) for i in range(members)]

    if jobs > 1:
        payloads = [
            (str(dataset_dir), None, s, epochs, noise_sigma, filter_width,
             seed, train_cell_stride, dtype)
            for s in seeds
        ]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            packed = list(pool.map(_final_train_task, payloads))
        results = [_unpack_train_result(p) for p in packed]
    else:
        train_data = FrameData(ds, ds.splits.train, noise=noise,
                               cell_stride=train_cell_stride, dtype=dtype)
        val_data = FrameData(ds, ds.splits.val, noise=noise,
                             cell_stride=train_cell_stride, dtype=dtype)
        results = train_baseline_ensemble(
            train_data, val_data, seeds, epochs=epochs,
            input_dim=train_data.input_dim,
            noise_injector_factory=train_data.make_injector, dtype=np.dtype(dtype),
        )
    nets = [r.state.net for r in results]

    report = {
        "command": "baseline",
        "version": __version__,
        "kernel_backend": _kernels.backend_name(),
        "seed": seed,
        "config": {
            "dataset": str(dataset_dir),
            "members": members,
            "epochs": epochs,
            "noise": noise_sigma,
            "filter_width": filter_width,
            "train_cell_stride": train_cell_stride,
            "dtype": dtype,
            "baseline_config": BASELINE.to_dict(),
        },
        "dataset": _dataset_block(ds, dataset_dir),
        "members": _member_summaries(results, seeds=seeds),
    }
    return _emit_run_artifacts(out_dir, ds, nets, noise, report,
                               [BASELINE] * members, seeds)


def run_bode_experiment(dataset_dir, out_dir, *, members: int, n_sobol: int,
                        n_total: int, epochs: int, bo_epochs: int, seed: int,
                        noise_sigma: float = 0.0, filter_width: float = 2.0,
                        bo_cell_stride: int = 2, train_cell_stride: int = 1,
                        acq_raw: int = 512, acq_mc: int = 256,
                        dtype: str = "float32", jobs: int = 1) -> dict:
    if n_total <= n_sobol:
        raise ValueError(f"iters ({n_total}) must exceed sobol count ({n_sobol})")
    ds = load_dataset(dataset_dir)
    out_dir = Path(out_dir)
    noise = make_noise_spec(noise_sigma, filter_width, seed)
    n_bo = n_total - n_sobol

    member_outcomes = None
    if jobs > 1:
        payloads = [
            (str(dataset_dir), m, child_seed(seed, "member", m), n_sobol, n_bo,
             bo_epochs, noise_sigma, filter_width, seed, bo_cell_stride, dtype,
             acq_raw, acq_mc)
            for m in range(members)
        ]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            member_outcomes = list(pool.map(_member_bo_task, payloads))

    train_data = FrameData(ds, ds.splits.train, noise=noise,
                           cell_stride=train_cell_stride, dtype=dtype)
    val_data = FrameData(ds, ds.splits.val, noise=noise,
                         cell_stride=train_cell_stride, dtype=dtype)
    bo_train = FrameData(ds, ds.splits.bo_train, noise=noise,
                         cell_stride=bo_cell_stride, dtype=dtype)
    bo_val = FrameData(ds, ds.splits.bo_val, noise=noise,
                       cell_stride=bo_cell_stride, dtype=dtype)

    result = run_bode(
        bo_train, bo_val, train_data, val_data, input_dim=train_data.input_dim,
        m_ensemble=members, n_sobol=n_sobol, n_bo=n_bo, master_seed=seed,
        epochs_per_trial=bo_epochs, final_epochs=epochs, dtype=np.dtype(dtype),
        n_raw=acq_raw, n_mc_samples=acq_mc, member_outcomes=member_outcomes,
    )
    nets = [r.state.net for r in result.members]
    seeds = [child_seed(seed, "final", m) for m in range(members)]

    write_trials_jsonl(out_dir / "trials.jsonl", result.logs)
    report = {
        "command": "bode",
        "version": __version__,
        "kernel_backend": _kernels.backend_name(),
        "seed": seed,
        "config": {
            "dataset": str(dataset_dir),
            "members": members,
            "sobol": n_sobol,
            "iters": n_total,
            "epochs": epochs,
            "bo_epochs": bo_epochs,
            "noise": noise_sigma,
            "filter_width": filter_width,
            "bo_cell_stride": bo_cell_stride,
            "train_cell_stride": train_cell_stride,
            "acq_raw": acq_raw,
            "acq_mc": acq_mc,
            "dtype": dtype,
        },
        "dataset": _dataset_block(ds, dataset_dir),
        "members": _member_summaries(result.members, configs=result.configs, seeds=seeds),
        "optimization": {
            "best_rmse_per_member": [log.best().rmse for log in result.logs],
            "running_min_per_member": [log.running_min() for log in result.logs],
        },
    }
    return _emit_run_artifacts(out_dir, ds, nets, noise, report, result.configs, seeds)


def _member_bo_task(args):
    (dataset_dir, member_index, member_seed, n_sobol, n_bo, bo_epochs, sigma,
     filter_width, master_seed, bo_cell_stride, dtype, acq_raw, acq_mc) = args
    ds = load_dataset(dataset_dir)
    noise = make_noise_spec(sigma, filter_width, master_seed)
    bo_train = FrameData(ds, ds.splits.bo_train, noise=noise,
                         cell_stride=bo_cell_stride, dtype=dtype)
    bo_val = FrameData(ds, ds.splits.bo_val, noise=noise,
                       cell_stride=bo_cell_stride, dtype=dtype)
    trial_fn = make_field_trial_fn(bo_train, bo_val, bo_train.input_dim,
                                   bo_epochs, dtype=np.dtype(dtype))
    return run_member_bo(trial_fn, n_sobol, n_bo, member_seed=member_seed,
                         member_index=member_index, n_raw=acq_raw,
                         n_mc_samples=acq_mc)


def _final_train_task(args):
    (dataset_dir, config_dict, seed, epochs, sigma, filter_width, master_seed,
     train_cell_stride, dtype) = args
    ds = load_dataset(dataset_dir)
    noise = make_noise_spec(sigma, filter_width, master_seed)
    train_data = FrameData(ds, ds.splits.train, noise=noise,
                           cell_stride=train_cell_stride, dtype=dtype)
    val_data = FrameData(ds, ds.splits.val, noise=noise,
                         cell_stride=train_cell_stride, dtype=dtype)
    cfg = BASELINE if config_dict is None else HyperConfig.from_dict(config_dict)
    spec = DenseNetSpec.from_config(train_data.input_dim, cfg)
    res = train(spec, train_data, val_data, cfg, epochs=epochs, seed=seed,
                noise_injector=train_data.make_injector(), dtype=np.dtype(dtype))
    return (res.state.net.params, spec.to_dict(), dtype, res.train_rmse,
            res.val_rmse, res.state.epoch, res.state.aborted)


def _unpack_train_result(packed):
    from .network import TrainResult, TrainState

    params, spec_dict, dtype, train_rmse, val_rmse, epoch, aborted = packed
    net = DenseNet(DenseNetSpec.from_dict(spec_dict), params, np.dtype(dtype))
    state = TrainState(net=net, moment1=np.zeros_like(params),
                       moment2=np.zeros_like(params), epoch=epoch, aborted=aborted)
    res = TrainResult(state=state)
    res.train_rmse = list(train_rmse)
    res.val_rmse = list(val_rmse)
    return res


def _recompute_run_metrics(run_dir: Path, dataset_dir=None) -> dict:
    """Recompute test metrics from a run's CSV artifacts."""
    report = read_json(run_dir / "report.json")
    preds = read_csv_columns(run_dir / "predictions.csv", PREDICTIONS_HEADER)
    unc = read_csv_columns(run_dir / "uncertainty.csv", UNCERTAINTY_HEADER)
    from .ensemble import EnsemblePrediction
    from .metrics import coverage, mean_nll, r_squared, uncertainty_summary

    pred = EnsemblePrediction(
        mean=unc["mean"],
        total_var=unc["total_var"],
        aleatoric_var=unc["aleatoric_var"],
        epistemic_var=unc["epistemic_var"],
        n_members=len(report.get("members", [])) or 2,
    )
    y = preds["y_true"]
    recomputed = {
        "split": "test",
        "rmse": rmse(y, preds["y_pred"]),
        "r2": r_squared(y, preds["y_pred"]),
        "mean_nll": mean_nll(y, pred.mean, pred.total_var),
        "coverage68": coverage(y, pred, 0.68),
        "coverage95": coverage(y, pred, 0.95),
        **uncertainty_summary(pred),
    }
    out = {
        "run": str(run_dir),
        "command": report.get("command"),
        "stored": report["metrics"]["test"],
        "recomputed": recomputed,
        "matches_stored": all(
            recomputed[k] == report["metrics"]["test"][k] for k in recomputed
        ),
        "noise": report.get("noise"),
    }
    if dataset_dir is not None and report.get("noise"):
        ds = load_dataset(dataset_dir)
        test_data = FrameData(ds, ds.splits.test, noise=None, cell_stride=1)
        y_clean = test_data.clean_raw_targets().reshape(-1)
        sigma = report["noise"]["sigma"]
        injected = float(sigma * np.mean(y_clean))
        recovered = float(np.mean(np.sqrt(np.maximum(pred.total_var, 0.0))))
        out["noise_recovery_recomputed"] = {
            "injected_mean_std": injected,
            "recovered_mean_total_std": recovered,
            "recovery_ratio": recovered / injected if injected > 0 else float("inf"),
        }
    return out


def evaluate_runs(run_dirs, out_dir, dataset_dir=None) -> dict:
    """Recompute metrics for one or two runs and emit a comparison report."""
    if not run_dirs or len(run_dirs) > 2:
        raise ValueError("evaluate takes one or two run directories")
    entries = [_recompute_run_metrics(Path(r), dataset_dir) for r in run_dirs]
    comparison = {"version": __version__, "runs": entries}
    if len(entries) == 2:
        a, b = entries[0]["recomputed"], entries[1]["recomputed"]
        comparison["difference"] = {
            key: b[key] - a[key]
            for key in ("rmse", "r2", "mean_nll", "coverage68", "coverage95",
                        "mean_total_std", "mean_aleatoric_std", "mean_epistemic_std")
        }
        ra = entries[0].get("noise") or {}
        rb = entries[1].get("noise") or {}
        if "recovery_ratio" in ra and "recovery_ratio" in rb:
            comparison["noise_recovery_ratio_delta"] = (
                rb["recovery_ratio"] - ra["recovery_ratio"]
            )
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_json(out_dir / "comparison.json", comparison)
    return comparison
