"""Command line: generate / baseline / bode / evaluate.

Configuration precedence is flag > config file > default.  A config file is
flat JSON; a run's ``manifest.json`` is also accepted (its ``config`` block
is used), so any run can be reproduced with
``bode <command> --config <run>/manifest.json --out <fresh-dir>``.

Exit codes: 0 success, 2 validation error, 3 compute failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__

GENERATE_DEFAULTS = {
    "nx": 16,
    "nz": 32,
    "timesteps": 600,
    "seed": 0,
    "out": "dataset",
    "force": False,
}

BASELINE_DEFAULTS = {
    "dataset": "dataset",
    "out": "runs/baseline",
    "seed": 0,
    "jobs": 1,
    "force": False,
    "members": 5,
    "epochs": 200,
    "noise": 0.0,
    "filter_width": 2.0,
    "train_cell_stride": 1,
    "dtype": "float32",
}

BODE_DEFAULTS = {
    "dataset": "dataset",
    "out": "runs/bode",
    "seed": 0,
    "jobs": 1,
    "force": False,
    "members": 5,
    "sobol": 8,
    "iters": 30,
    "epochs": 200,
    "bo_epochs": 60,
    "noise": 0.0,
    "filter_width": 2.0,
    "bo_cell_stride": 2,
    "train_cell_stride": 1,
    "acq_raw": 512,
    "acq_mc": 256,
    "dtype": "float32",
}

EVALUATE_DEFAULTS = {
    "runs": [],
    "dataset": None,
    "out": "comparison",
    "force": False,
}


class ValidationError(ValueError):
    pass


def _load_config_file(path) -> dict:
    try:
        obj = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ValidationError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config file {path} is not valid JSON: {exc}")
    if isinstance(obj, dict) and "config" in obj and "command" in obj:
        obj = obj["config"]  # a manifest
    if not isinstance(obj, dict):
        raise ValidationError(f"config file {path} must hold a JSON object")
    return obj


def resolve_config(defaults: dict, file_config: dict | None, flags: dict) -> dict:
    """flag > file > default; unknown file keys are rejected."""
    resolved = dict(defaults)
    if file_config:
        unknown = set(file_config) - set(defaults)
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        resolved.update(file_config)
    for key, value in flags.items():
        if value is not None:
            resolved[key] = value
    return resolved


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ValidationError(msg)


def _validate_common(cfg: dict) -> None:
    _require(int(cfg.get("jobs", 1)) >= 1, "jobs must be >= 1")
    _require(cfg.get("dtype", "float32") in ("float32", "float64"),
             "dtype must be float32 or float64")
    _require(float(cfg.get("noise", 0.0)) >= 0.0, "noise must be >= 0")
    _require(float(cfg.get("filter_width", 2.0)) > 0.0, "filter_width must be > 0")


def _prepare_out_dir(out, force: bool) -> Path:
    out = Path(out)
    if out.exists() and any(out.iterdir()) and not force:
        raise ValidationError(
            f"output directory {out} exists and is not empty (use --force)"
        )
    out.mkdir(parents=True, exist_ok=True)
    return out


_INVOCATION_KEYS = ("out", "force", "jobs")  # not semantic; kept out of manifests


def _write_manifest(out: Path, command: str, cfg: dict) -> None:
    from .reporting import write_manifest

    write_manifest(out, command,
                   {k: v for k, v in cfg.items() if k not in _INVOCATION_KEYS})


def cmd_generate(cfg: dict) -> int:
    _require(int(cfg["nx"]) >= 8 and int(cfg["nz"]) >= 8, "grid must be at least 8x8")
    _require(int(cfg["timesteps"]) >= 100, "need at least 100 timesteps")
    out = _prepare_out_dir(cfg["out"], cfg["force"])

    from .fielddata import generate_synthetic, save_dataset

    ds = generate_synthetic(int(cfg["nx"]), int(cfg["nz"]),
                            int(cfg["timesteps"]), int(cfg["seed"]))
    save_dataset(ds, out)
    _write_manifest(out, "generate", cfg)
    sizes = {k: len(v) for k, v in ds.splits.to_dict().items()}
    print(f"dataset written to {out} (grid {ds.nx}x{ds.nz}, "
          f"{ds.n_timesteps} timesteps, splits {sizes})")
    return 0


def cmd_baseline(cfg: dict) -> int:
    _validate_common(cfg)
    _require(int(cfg["members"]) >= 2, "members must be >= 2 (ensemble)")
    _require(int(cfg["epochs"]) >= 1, "epochs must be >= 1")
    _require(int(cfg["train_cell_stride"]) >= 1, "train_cell_stride must be >= 1")
    out = _prepare_out_dir(cfg["out"], cfg["force"])
    _write_manifest(out, "baseline", cfg)

    from .experiments import run_baseline_experiment

    report = run_baseline_experiment(
        cfg["dataset"], out, members=int(cfg["members"]), epochs=int(cfg["epochs"]),
        seed=int(cfg["seed"]), noise_sigma=float(cfg["noise"]),
        filter_width=float(cfg["filter_width"]),
        train_cell_stride=int(cfg["train_cell_stride"]),
        dtype=cfg["dtype"], jobs=int(cfg["jobs"]),
    )
    t = report["metrics"]["test"]
    print(f"baseline run in {out}: test rmse {t['rmse']:.5g}, "
          f"mean total std {t['mean_total_std']:.5g}")
    return 0


def cmd_bode(cfg: dict) -> int:
    _validate_common(cfg)
    _require(int(cfg["members"]) >= 2, "members must be >= 2 (ensemble)")
    _require(int(cfg["sobol"]) >= 2, "sobol must be >= 2")
    _require(int(cfg["iters"]) > int(cfg["sobol"]),
             "iters (total trials) must exceed sobol")
    _require(int(cfg["epochs"]) >= 1 and int(cfg["bo_epochs"]) >= 1,
             "epochs and bo_epochs must be >= 1")
    _require(int(cfg["bo_cell_stride"]) >= 1 and int(cfg["train_cell_stride"]) >= 1,
             "cell strides must be >= 1")
    _require(int(cfg["acq_raw"]) >= 1 and int(cfg["acq_mc"]) >= 1,
             "acquisition budgets must be >= 1")
    out = _prepare_out_dir(cfg["out"], cfg["force"])
    _write_manifest(out, "bode", cfg)

    from .experiments import run_bode_experiment

    report = run_bode_experiment(
        cfg["dataset"], out, members=int(cfg["members"]), n_sobol=int(cfg["sobol"]),
        n_total=int(cfg["iters"]), epochs=int(cfg["epochs"]),
        bo_epochs=int(cfg["bo_epochs"]), seed=int(cfg["seed"]),
        noise_sigma=float(cfg["noise"]), filter_width=float(cfg["filter_width"]),
        bo_cell_stride=int(cfg["bo_cell_stride"]),
        train_cell_stride=int(cfg["train_cell_stride"]),
        acq_raw=int(cfg["acq_raw"]), acq_mc=int(cfg["acq_mc"]),
        dtype=cfg["dtype"], jobs=int(cfg["jobs"]),
    )
    t = report["metrics"]["test"]
    line = (f"bode run in {out}: test rmse {t['rmse']:.5g}, "
            f"mean total std {t['mean_total_std']:.5g}")
    if report.get("noise"):
        line += f", noise recovery ratio {report['noise']['recovery_ratio']:.3f}"
    print(line)
    return 0


def cmd_evaluate(cfg: dict) -> int:
    _require(1 <= len(cfg["runs"]) <= 2, "evaluate takes one or two run directories")
    out = _prepare_out_dir(cfg["out"], cfg["force"])

    from .experiments import evaluate_runs

    comparison = evaluate_runs(cfg["runs"], out, dataset_dir=cfg.get("dataset"))
    _write_manifest(out, "evaluate", cfg)
    for entry in comparison["runs"]:
        print(f"{entry['run']}: recomputed rmse {entry['recomputed']['rmse']:.5g} "
              f"(matches stored: {entry['matches_stored']})")
    return 0


def _add_common(sub, with_jobs: bool = True):
    sub.add_argument("--seed", type=int, default=None, help="master seed")
    sub.add_argument("--out", type=str, default=None, help="output directory")
    sub.add_argument("--config", type=str, default=None,
                     help="flat JSON config file or a manifest.json")
    sub.add_argument("--force", action="store_true", default=None,
                     help="allow writing into a non-empty output directory")
    if with_jobs:
        sub.add_argument("--jobs", type=int, default=None,
                         help="parallel workers over ensemble members")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="bode",
        description="Bayesian-optimized deep ensembles on synthetic field data",
    )
    p.add_argument("--version", action="version", version=f"bode {__version__}")
    subs = p.add_subparsers(dest="command", required=True)

    g = subs.add_parser("generate", help="synthesize a field dataset")
    _add_common(g, with_jobs=False)
    g.add_argument("--nx", type=int, default=None)
    g.add_argument("--nz", type=int, default=None)
    g.add_argument("--timesteps", type=int, default=None)

    b = subs.add_parser("baseline", help="train the fixed-config reference ensemble")
    _add_common(b)
    b.add_argument("--data", dest="dataset", type=str, default=None)
    b.add_argument("--members", type=int, default=None)
    b.add_argument("--epochs", type=int, default=None)
    b.add_argument("--noise", type=float, default=None,
                   help="relative noise std (0 disables injection)")
    b.add_argument("--filter-width", type=float, default=None)
    b.add_argument("--train-cell-stride", type=int, default=None)
    b.add_argument("--dtype", type=str, default=None)

    o = subs.add_parser("bode", help="optimize per-member hyperparameters, then train")
    _add_common(o)
    o.add_argument("--data", dest="dataset", type=str, default=None)
    o.add_argument("--members", type=int, default=None)
    o.add_argument("--sobol", type=int, default=None, help="Sobol warmup trials N0")
    o.add_argument("--iters", type=int, default=None, help="total trials per member")
    o.add_argument("--epochs", type=int, default=None)
    o.add_argument("--bo-epochs", type=int, default=None,
                   help="training epochs per optimization trial")
    o.add_argument("--noise", type=float, default=None)
    o.add_argument("--filter-width", type=float, default=None)
    o.add_argument("--bo-cell-stride", type=int, default=None)
    o.add_argument("--train-cell-stride", type=int, default=None)
    o.add_argument("--acq-raw", type=int, default=None)
    o.add_argument("--acq-mc", type=int, default=None)
    o.add_argument("--dtype", type=str, default=None)

    e = subs.add_parser("evaluate", help="recompute and compare run metrics")
    _add_common(e, with_jobs=False)
    e.add_argument("runs", nargs="*", help="one or two run directories")
    e.add_argument("--data", dest="dataset", type=str, default=None)
    return p


_COMMANDS = {
    "generate": (GENERATE_DEFAULTS, cmd_generate),
    "baseline": (BASELINE_DEFAULTS, cmd_baseline),
    "bode": (BODE_DEFAULTS, cmd_bode),
    "evaluate": (EVALUATE_DEFAULTS, cmd_evaluate),
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    defaults, runner = _COMMANDS[args.command]
    try:
        file_cfg = _load_config_file(args.config) if args.config else None
        flags = {
            k: v for k, v in vars(args).items()
            if k in defaults and not (k == "runs" and v == [])
        }
        cfg = resolve_config(defaults, file_cfg, flags)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        return runner(cfg)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"compute failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
