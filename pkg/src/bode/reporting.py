"""Run-artifact emission: report.json, CSV exports, trial logs, manifests.

All writers are deterministic: floats are serialized with shortest
round-trip repr, JSON keys are sorted, and nothing records wall-clock time
except the per-trial ``wall_time_s`` field of trials.jsonl (report.json must
reproduce bit-identically when a run is repeated from its manifest).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import __version__
from .ensemble import EnsemblePrediction

PREDICTIONS_HEADER = ("x", "z", "t", "y_true", "y_pred")
UNCERTAINTY_HEADER = ("x", "z", "t", "mean", "total_var", "aleatoric_var", "epistemic_var")


def pyify(obj):
    """Recursively convert numpy scalars/arrays so json can serialize them."""
    if isinstance(obj, dict):
        return {k: pyify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [pyify(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [pyify(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_json(path, obj) -> None:
    path = Path(path)
    try:
        path.write_text(json.dumps(pyify(obj), indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"failed writing {path}: {exc}") from exc


def read_json(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing artifact: {path}")
    return json.loads(path.read_text())


def _fmt(v) -> str:
    return repr(float(v))


def _write_csv(path, header, columns) -> None:
    path = Path(path)
    n = len(columns[0])
    for col in columns:
        if len(col) != n:
            raise ValueError("CSV columns must have equal length")
    try:
        with open(path, "w") as f:
            f.write(",".join(header) + "\n")
            for i in range(n):
                f.write(",".join(_fmt(col[i]) for col in columns) + "\n")
    except OSError as exc:
        raise OSError(f"failed writing {path}: {exc}") from exc


def write_predictions_csv(path, x, z, t, y_true, y_pred) -> None:
    _write_csv(path, PREDICTIONS_HEADER, [x, z, t, y_true, y_pred])


def write_uncertainty_csv(path, x, z, t, pred: EnsemblePrediction) -> None:
    _write_csv(
        path,
        UNCERTAINTY_HEADER,
        [x, z, t, pred.mean, pred.total_var, pred.aleatoric_var, pred.epistemic_var],
    )


def read_csv_columns(path, expected_header) -> dict[str, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing artifact: {path}")
    with open(path) as f:
        header = f.readline().strip().split(",")
        if tuple(header) != tuple(expected_header):
            raise ValueError(f"{path}: unexpected header {header}")
        data = np.loadtxt(f, delimiter=",", ndmin=2)
    if data.size == 0:
        raise ValueError(f"{path}: no data rows")
    return {name: data[:, i] for i, name in enumerate(header)}


def write_trials_jsonl(path, logs) -> None:
    try:
        with open(path, "w") as f:
            for log in logs:
                for rec in log.records():
                    f.write(json.dumps(pyify(rec), sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"failed writing {path}: {exc}") from exc


def read_trials_jsonl(path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing artifact: {path}")
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]


def write_manifest(out_dir, command: str, resolved_config: dict) -> None:
    """Full resolved configuration; re-running from it reproduces the run."""
    write_json(
        Path(out_dir) / "manifest.json",
        {"command": command, "config": resolved_config, "version": __version__},
    )


def ensemble_csv_arrays(cell_xz: np.ndarray, times: np.ndarray, n_frames: int):
    """Tile per-cell coordinates and per-frame times into flat CSV columns."""
    rows_per_frame = len(cell_xz)
    x = np.tile(cell_xz[:, 0], n_frames)
    z = np.tile(cell_xz[:, 1], n_frames)
    t = np.repeat(np.asarray(times, dtype=float), rows_per_frame)
    return x, z, t
