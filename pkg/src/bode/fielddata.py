"""Synthetic transient field dataset, regridding, normalization and noise.

The dataset stands in for an expensive solver database: a smooth
nonnegative target field (a descending, decaying high-viscosity region over
a 2-D vertical slice) plus four correlated input channels (temperature-,
pressure- and two velocity-like fields) sampled on a uniform cell-center
grid over ``n_timesteps`` frames.  The target is an exact smooth function of
the per-cell input features, so a well-fit regressor can drive its residual
(and hence its learned noise level) arbitrarily low on clean data.

Also here: the timestep split protocol (70 / 29.5 / 0.5 train/val/test plus
a 30% optimization subset split 7:3), z-normalization with train-split
statistics, kNN regridding of scattered samples onto a uniform grid, and
proportional Gaussian noise injection with per-epoch resampling.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.spatial import cKDTree

from .seeds import child_rng

CHANNEL_NAMES = ("temperature", "pressure", "velocity_x", "velocity_z")
# input feature vector layout: cell coordinates then channels
FEATURE_NAMES = ("x", "z") + CHANNEL_NAMES

DOMAIN_WIDTH = 1.0    # m
DOMAIN_HEIGHT = 2.0   # m
TIMESTEP_SECONDS = 0.2

TRAIN_FRACTION = 0.70
VAL_FRACTION = 0.295
TEST_FRACTION = 0.005
BO_SUBSET_FRACTION = 0.30
BO_TRAIN_RATIO = 0.7

EVAL_NOISE_EPOCH = 0  # reserved epoch index for the fixed evaluation draw


@dataclass(frozen=True)
class NoiseSpec:
    """Proportional Gaussian noise: relative std, filter width, seed stream."""

    sigma: float
    filter_width: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.filter_width <= 0:
            raise ValueError("filter_width must be positive")


@dataclass(frozen=True)
class SplitLedger:
    """Partition of timesteps plus the optimization subset."""

    train: tuple[int, ...]
    val: tuple[int, ...]
    test: tuple[int, ...]
    bo_train: tuple[int, ...]
    bo_val: tuple[int, ...]

    def __post_init__(self):
        full = sorted(self.train + self.val + self.test)
        if full != list(range(len(full))):
            raise ValueError("train/val/test must partition the timesteps")
        main = set(self.train) | set(self.val)
        if not (set(self.bo_train) | set(self.bo_val)) <= main:
            raise ValueError("optimization subset must lie inside train+val")
        if set(self.bo_train) & set(self.bo_val):
            raise ValueError("bo_train and bo_val must be disjoint")

    def to_dict(self) -> dict:
        return {
            "train": list(self.train),
            "val": list(self.val),
            "test": list(self.test),
            "bo_train": list(self.bo_train),
            "bo_val": list(self.bo_val),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SplitLedger":
        return cls(**{k: tuple(d[k]) for k in ("train", "val", "test", "bo_train", "bo_val")})


def split_timesteps(n_timesteps: int, seed: int) -> SplitLedger:
    """Assign timesteps to splits.

    Test frames are spread evenly through the transient (they are the
    reporting set and should sample distinct phases); the remaining
    timesteps are shuffled in contiguous blocks and assigned 70/29.5 to
    train/validation.  The optimization subset draws 30% of train+val and
    splits it 7:3.
    """
    rng = child_rng(seed, "splits")
    n_test = max(1, round(TEST_FRACTION * n_timesteps))
    n_train = round(TRAIN_FRACTION * n_timesteps)

    stride = n_timesteps / n_test
    offset = int(rng.integers(0, max(1, int(stride))))
    picked = {int(offset + round(i * stride)) % n_timesteps for i in range(n_test)}
    cursor = 0
    while len(picked) < n_test:  # collision guard; spacing makes this rare
        if cursor not in picked:
            picked.add(cursor)
        cursor += 1
    test = tuple(sorted(picked))

    rest = [t for t in range(n_timesteps) if t not in set(test)]
    block = max(1, len(rest) // 40)
    blocks = [rest[i:i + block] for i in range(0, len(rest), block)]
    rng.shuffle(blocks)
    stream = [t for b in blocks for t in b]
    train = tuple(sorted(stream[:n_train]))
    val = tuple(sorted(stream[n_train:]))

    pool = sorted(train + val)
    n_bo = round(BO_SUBSET_FRACTION * len(pool))
    chosen = rng.choice(len(pool), size=n_bo, replace=False)
    chosen = [pool[i] for i in sorted(chosen)]
    perm = rng.permutation(n_bo)
    n_bo_train = round(BO_TRAIN_RATIO * n_bo)
    bo_train = tuple(sorted(chosen[i] for i in perm[:n_bo_train]))
    bo_val = tuple(sorted(chosen[i] for i in perm[n_bo_train:]))
    return SplitLedger(train=train, val=val, test=test, bo_train=bo_train, bo_val=bo_val)


def compute_stats(values: np.ndarray, axis=0) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and population std; zero-variance channels get std 1
    so their z-scores are exactly 0 (degenerate rule)."""
    mean = np.mean(values, axis=axis)
    std = np.std(values, axis=axis)
    std = np.where(std == 0.0, 1.0, std)
    return np.asarray(mean, dtype=np.float64), np.asarray(std, dtype=np.float64)


def z_normalize(values: np.ndarray, stats=None):
    """``(x - mean) / std`` per channel; returns (z, (mean, std)).

    When ``stats`` is None they are computed from ``values`` itself, which is
    only correct when ``values`` is the training split.
    """
    if stats is None:
        stats = compute_stats(values.reshape(-1, values.shape[-1]) if values.ndim > 2 else values)
    mean, std = stats
    return (values - mean) / std, stats


def inverse_z(z: np.ndarray, stats) -> np.ndarray:
    mean, std = stats
    return z * std + mean


def knn_regrid(points: np.ndarray, values: np.ndarray, grid_points: np.ndarray,
               k: int) -> np.ndarray:
    """Inverse-distance-weighted k-nearest-neighbour regridding.

    Each output location takes the IDW mean of its ``k`` nearest source
    values; a location coinciding with a source point takes that source's
    value exactly.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    values = np.asarray(values, dtype=float)
    grid_points = np.atleast_2d(np.asarray(grid_points, dtype=float))
    if len(points) == 0:
        raise ValueError("source point set is empty")
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(points) < k:
        raise ValueError(f"need at least k={k} source points, got {len(points)}")
    dist, idx = cKDTree(points).query(grid_points, k=k)
    dist = np.atleast_2d(dist.reshape(len(grid_points), k))
    idx = idx.reshape(len(grid_points), k)
    if k == 1:
        return values[idx[:, 0]].copy()
    out = np.empty(len(grid_points))
    coincident = dist[:, 0] < 1e-12
    out[coincident] = values[idx[coincident, 0]]
    rest = ~coincident
    if np.any(rest):
        w = 1.0 / dist[rest]
        out[rest] = np.sum(w * values[idx[rest]], axis=1) / np.sum(w, axis=1)
    return out


def inject_noise(frame: np.ndarray, spec: NoiseSpec, epoch: int, timestep: int) -> np.ndarray:
    """Proportional smoothed Gaussian noise: ``max(0, f + eps_filtered * f)``.

    The per-cell factors are drawn N(0, sigma^2) from a counter-based stream
    keyed by (seed, epoch, timestep), smoothed with a Gaussian filter
    (mirror-padded, truncated at 4 filter widths) and rescaled so the frame's
    sample std is exactly ``sigma`` again; nonnegativity is then clamped.
    """
    frame = np.asarray(frame, dtype=np.float64)
    if spec.sigma == 0.0:
        return frame.copy()
    if epoch < 0 or timestep < 0:
        raise ValueError("epoch and timestep indices must be nonnegative")
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, epoch, timestep]))
    eps = rng.standard_normal(frame.shape) * spec.sigma
    eps = gaussian_filter(eps, sigma=spec.filter_width, mode="mirror", truncate=4.0)
    s = float(eps.std())
    if s > 0:
        eps *= spec.sigma / s
    return np.maximum(0.0, frame + eps * frame)


@dataclass
class FieldDataset:
    """Time-indexed 2-D fields with input channels, stats and split ledger.

    ``features`` has shape (T, nx*nz, len(FEATURE_NAMES)) in raw units and
    already includes the two coordinate columns; ``targets`` has shape
    (T, nx, nz), raw units, nonnegative.  Stats are computed over the
    training split only.
    """

    nx: int
    nz: int
    x_centers: np.ndarray
    z_centers: np.ndarray
    times: np.ndarray
    features: np.ndarray
    targets: np.ndarray
    splits: SplitLedger
    feature_stats: tuple[np.ndarray, np.ndarray]
    target_stats: tuple[float, float]
    seed: int

    @property
    def n_timesteps(self) -> int:
        return len(self.times)

    @property
    def n_cells(self) -> int:
        return self.nx * self.nz

    def cell_coordinates(self) -> np.ndarray:
        xg, zg = np.meshgrid(self.x_centers, self.z_centers, indexing="ij")
        return np.column_stack([xg.ravel(), zg.ravel()])

    def target_rows(self, t: int) -> np.ndarray:
        return self.targets[t].reshape(-1)

    def target_rms(self, timesteps) -> float:
        vals = self.targets[list(timesteps)]
        return float(np.sqrt(np.mean(vals.astype(np.float64) ** 2)))


def generate_synthetic(nx: int, nz: int, n_timesteps: int, seed: int) -> FieldDataset:
    """Deterministic synthetic transient; see module docstring.

    Requires nx, nz >= 8 and n_timesteps >= 100.
    """
    if nx < 8 or nz < 8:
        raise ValueError("grid must be at least 8x8")
    if n_timesteps < 100:
        raise ValueError("need at least 100 timesteps")
    rng = child_rng(seed, "field")
    jitter = lambda scale: 1.0 + scale * (2.0 * rng.random() - 1.0)

    x = (np.arange(nx) + 0.5) * (DOMAIN_WIDTH / nx)
    z = (np.arange(nz) + 0.5) * (DOMAIN_HEIGHT / nz)
    xg, zg = np.meshgrid(x, z, indexing="ij")
    times = np.arange(n_timesteps) * TIMESTEP_SECONDS

    amp0 = 1.8 * jitter(0.10)
    xc1 = 0.32 * DOMAIN_WIDTH * jitter(0.10)
    sx1 = 0.30 * DOMAIN_WIDTH * jitter(0.10)
    sz1 = 0.22 * DOMAIN_HEIGHT * jitter(0.10)
    xc2 = 0.72 * DOMAIN_WIDTH * jitter(0.05)
    zc2 = 0.35 * DOMAIN_HEIGHT * jitter(0.05)
    s2 = 0.38 * DOMAIN_WIDTH * jitter(0.10)
    z_hi = 0.75 * DOMAIN_HEIGHT * jitter(0.05)
    z_drop = 0.42 * DOMAIN_HEIGHT * jitter(0.05)

    features = np.empty((n_timesteps, nx * nz, len(FEATURE_NAMES)), dtype=np.float32)
    targets = np.empty((n_timesteps, nx, nz), dtype=np.float32)
    coords = np.column_stack([xg.ravel(), zg.ravel()])

    for i in range(n_timesteps):
        s = i / (n_timesteps - 1)
        zc = z_hi - z_drop * s
        amp = amp0 * (0.45 + 0.55 * np.exp(-1.6 * s))

        bump1 = np.exp(-((xg - xc1) ** 2) / (2 * sx1**2) - ((zg - zc) ** 2) / (2 * sz1**2))
        bump2 = np.exp(-((xg - xc2) ** 2 + (zg - zc2) ** 2) / (2 * s2**2))
        target = amp * bump1 + 0.3 * amp * bump2

        temp = 780.0 - 60.0 * np.tanh((zg - zc) / (0.18 * DOMAIN_HEIGHT)) \
            + 8.0 * (xg / DOMAIN_WIDTH) * (1.0 - s)
        pressure = 1.0e5 + 9.5e3 * (DOMAIN_HEIGHT - zg) + 900.0 * amp
        psi = amp * np.exp(-((xg - xc1) ** 2) / (2 * sx1**2)
                           - ((zg - zc) ** 2) / (2 * sz1**2))
        ux = 0.15 * psi * (zg - zc) / sz1**2
        uz = -0.15 * psi * (xg - xc1) / sx1**2

        targets[i] = target
        features[i, :, 0] = coords[:, 0]
        features[i, :, 1] = coords[:, 1]
        features[i, :, 2] = temp.ravel()
        features[i, :, 3] = pressure.ravel()
        features[i, :, 4] = ux.ravel()
        features[i, :, 5] = uz.ravel()

    splits = split_timesteps(n_timesteps, seed)
    train_rows = features[list(splits.train)].reshape(-1, len(FEATURE_NAMES))
    feature_stats = compute_stats(train_rows.astype(np.float64))
    target_stats_arr = compute_stats(
        targets[list(splits.train)].astype(np.float64).reshape(-1, 1)
    )
    target_stats = (float(target_stats_arr[0][0]), float(target_stats_arr[1][0]))
    return FieldDataset(
        nx=nx, nz=nz, x_centers=x, z_centers=z, times=times,
        features=features, targets=targets, splits=splits,
        feature_stats=feature_stats, target_stats=target_stats, seed=seed,
    )


def save_dataset(ds: FieldDataset, path) -> None:
    """Directory layout: meta.json + per-frame little-endian float32 arrays."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    frames = path / "frames"
    frames.mkdir(exist_ok=True)
    meta = {
        "format": "bode-field-dataset-v1",
        "grid": {
            "nx": ds.nx,
            "nz": ds.nz,
            "x_centers": [float(v) for v in ds.x_centers],
            "z_centers": [float(v) for v in ds.z_centers],
        },
        "n_timesteps": ds.n_timesteps,
        "timestep_seconds": TIMESTEP_SECONDS,
        "seed": ds.seed,
        "feature_names": list(FEATURE_NAMES),
        "splits": ds.splits.to_dict(),
        "feature_stats": {
            "mean": [float(v) for v in ds.feature_stats[0]],
            "std": [float(v) for v in ds.feature_stats[1]],
        },
        "target_stats": {"mean": ds.target_stats[0], "std": ds.target_stats[1]},
        "frame_encoding": {
            "dtype": "<f4",
            "order": "row-major",
            "features": "frames/features_<t>.bin, shape (nx*nz, n_features)",
            "target": "frames/target_<t>.bin, shape (nx, nz)",
        },
    }
    (path / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    for t in range(ds.n_timesteps):
        (frames / f"features_{t:06d}.bin").write_bytes(
            np.ascontiguousarray(ds.features[t], dtype="<f4").tobytes()
        )
        (frames / f"target_{t:06d}.bin").write_bytes(
            np.ascontiguousarray(ds.targets[t], dtype="<f4").tobytes()
        )


def load_dataset(path) -> FieldDataset:
    path = Path(path)
    meta_path = path / "meta.json"
    if not meta_path.exists():
        raise FileNotFoundError(f"{path}: no meta.json (not a dataset directory)")
    meta = json.loads(meta_path.read_text())
    nx, nz = meta["grid"]["nx"], meta["grid"]["nz"]
    n_t = meta["n_timesteps"]
    n_feat = len(meta["feature_names"])
    features = np.empty((n_t, nx * nz, n_feat), dtype=np.float32)
    targets = np.empty((n_t, nx, nz), dtype=np.float32)
    for t in range(n_t):
        buf = (path / "frames" / f"features_{t:06d}.bin").read_bytes()
        features[t] = np.frombuffer(buf, dtype="<f4").reshape(nx * nz, n_feat)
        buf = (path / "frames" / f"target_{t:06d}.bin").read_bytes()
        targets[t] = np.frombuffer(buf, dtype="<f4").reshape(nx, nz)
    return FieldDataset(
        nx=nx,
        nz=nz,
        x_centers=np.array(meta["grid"]["x_centers"]),
        z_centers=np.array(meta["grid"]["z_centers"]),
        times=np.arange(n_t) * meta["timestep_seconds"],
        features=features,
        targets=targets,
        splits=SplitLedger.from_dict(meta["splits"]),
        feature_stats=(
            np.array(meta["feature_stats"]["mean"]),
            np.array(meta["feature_stats"]["std"]),
        ),
        target_stats=(meta["target_stats"]["mean"], meta["target_stats"]["std"]),
        seed=meta["seed"],
    )


class FrameData:
    """Training adapter over a set of timesteps: one sample = one cell row.

    Features are z-normalized with the dataset's train-split statistics; the
    target is z-normalized likewise.  Minibatches draw individual cell rows
    (the network is a per-cell regressor), while noise bookkeeping stays per
    frame: with a `NoiseSpec`, targets are re-drawn from the
    per-(epoch, timestep) stream, epoch indices >= 1 during training
    (`make_injector`) and the reserved epoch 0 for the fixed evaluation
    draw.  ``cell_stride`` trains on a uniform spatial subsample of each
    frame without touching the timestep splits.
    """

    def __init__(self, ds: FieldDataset, timesteps, noise: NoiseSpec | None = None,
                 cell_stride: int = 1, dtype=np.float32, eval_noise: bool = True):
        self.ds = ds
        self.timesteps = list(timesteps)
        if not self.timesteps:
            raise ValueError("need at least one timestep")
        self.noise = noise
        self.dtype = np.dtype(dtype)

        mask2d = np.zeros((ds.nx, ds.nz), dtype=bool)
        mask2d[::cell_stride, ::cell_stride] = True
        self.cell_mask = mask2d.reshape(-1)

        fmean, fstd = ds.feature_stats
        feats = ds.features[self.timesteps][:, self.cell_mask, :].astype(np.float64)
        self.x = ((feats - fmean) / fstd).astype(self.dtype)

        self.target_mean, self.target_std = ds.target_stats
        self._raw_frames = ds.targets[self.timesteps].astype(np.float64)
        self.y = np.empty((len(self.timesteps), self.x.shape[1]), dtype=self.dtype)
        self._fill_targets(EVAL_NOISE_EPOCH if (noise and eval_noise) else None)

    def _fill_targets(self, epoch: int | None) -> None:
        for i, t in enumerate(self.timesteps):
            raw = self._raw_frames[i]
            if self.noise is not None and epoch is not None:
                raw = inject_noise(raw, self.noise, epoch, t)
            norm = (raw.reshape(-1)[self.cell_mask] - self.target_mean) / self.target_std
            self.y[i] = norm.astype(self.dtype)

    def make_injector(self):
        """Per-epoch target refresh callback for `bode.network.train`."""
        if self.noise is None:
            return None

        def injector(epoch: int) -> None:
            self._fill_targets(epoch)

        return injector

    @property
    def n_samples(self) -> int:
        return self.y.size

    @property
    def input_dim(self) -> int:
        return self.x.shape[2]

    def rows(self, indices) -> tuple[np.ndarray, np.ndarray]:
        # flat views share memory with self.y, so per-epoch re-noising is
        # visible without copies
        return (
            self.x.reshape(-1, self.x.shape[-1])[indices],
            self.y.reshape(-1)[indices],
        )

    def cell_xz(self) -> np.ndarray:
        """(rows_per_frame, 2) raw coordinates of the selected cells."""
        return self.ds.cell_coordinates()[self.cell_mask]

    def frame_times(self) -> np.ndarray:
        return self.ds.times[self.timesteps]

    def all_rows(self) -> tuple[np.ndarray, np.ndarray]:
        return self.x.reshape(-1, self.x.shape[-1]), self.y.reshape(-1)

    def observed_raw_targets(self) -> np.ndarray:
        """Observed (possibly noisy, eval-draw) targets in raw units, per frame."""
        return inverse_z(self.y.astype(np.float64), (self.target_mean, self.target_std))

    def clean_raw_targets(self) -> np.ndarray:
        """Noise-free targets in raw units for the selected cells, per frame."""
        return self._raw_frames.reshape(len(self.timesteps), -1)[:, self.cell_mask]
