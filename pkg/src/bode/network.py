"""Densely connected feed-forward network with a heteroscedastic head.

Each hidden layer inside a dense block consumes the concatenation of the
block input and every earlier layer output in the block (the block input of
block b+1 is the full concatenated output of block b), so layer k of a block
sees ``block_input + (k-1) * growth_rate`` features.  The head emits a mean
channel and a raw variance channel; the variance is ``softplus(raw) + floor``
and therefore strictly positive.

Training is plain reverse-mode backpropagation written against the kernel
core (`bode._kernels`): matrix products go through BLAS, the elementwise
activation/dropout/loss/optimizer arithmetic through the fused kernels.
Everything is dtype-parametric; float32 is the training default, float64 is
used by the finite-difference gradient oracles.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .seeds import child_rng

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
VARIANCE_FLOOR = 1e-8
# the Gaussian NLL stiffens as predicted variances shrink (gradients scale
# like 1/sigma^2); clipping the global gradient norm keeps occasional large
# residual batches from kicking the optimizer out of a good basin
GRAD_CLIP_NORM = 10.0
MAX_ROWS_PER_PASS = 16384

_CHECKPOINT_MAGIC = b"BODENET1"


class TrainingAborted(RuntimeError):
    """Raised when a training step produced a non-finite loss and no finite
    checkpoint exists to fall back to."""


@dataclass(frozen=True)
class DenseNetSpec:
    """Architecture description; parameter count is a pure function of it."""

    input_dim: int
    n_dense_blocks: int
    block_layers: tuple[int, ...]
    growth_rate: int
    initial_features: int
    drop_rate: float
    variance_floor: float = VARIANCE_FLOOR

    def __post_init__(self):
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if len(self.block_layers) != self.n_dense_blocks:
            raise ValueError("block_layers length must equal n_dense_blocks")
        if not (0.0 <= self.drop_rate < 1.0):
            raise ValueError("drop_rate must be in [0, 1)")

    @classmethod
    def from_config(cls, input_dim: int, cfg) -> "DenseNetSpec":
        """Build from a HyperConfig or BaselineConfig."""
        return cls(
            input_dim=input_dim,
            n_dense_blocks=cfg.n_dense_blocks,
            block_layers=tuple(cfg.block_layers()),
            growth_rate=cfg.growth_rate,
            initial_features=cfg.initial_features,
            drop_rate=cfg.drop_rate,
        )

    def hidden_widths(self) -> list[int]:
        """Input width of every hidden (growth) layer, in forward order."""
        widths = []
        cur = self.initial_features
        for n_layers in self.block_layers:
            for _ in range(n_layers):
                widths.append(cur)
                cur += self.growth_rate
        return widths

    def final_width(self) -> int:
        return self.initial_features + self.growth_rate * sum(self.block_layers)

    def param_count(self) -> int:
        """Closed form: stem + per-block arithmetic series + head."""
        g = self.growth_rate
        count = (self.input_dim + 1) * self.initial_features
        cur = self.initial_features
        for n_layers in self.block_layers:
            count += n_layers * (cur + 1) * g + g * g * n_layers * (n_layers - 1) // 2
            cur += n_layers * g
        count += (cur + 1) * 2
        return count

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "n_dense_blocks": self.n_dense_blocks,
            "block_layers": list(self.block_layers),
            "growth_rate": self.growth_rate,
            "initial_features": self.initial_features,
            "drop_rate": self.drop_rate,
            "variance_floor": self.variance_floor,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DenseNetSpec":
        d = dict(d)
        d["block_layers"] = tuple(d["block_layers"])
        return cls(**d)


@dataclass
class MemberPrediction:
    """Per-model heteroscedastic prediction on a batch."""

    mean: np.ndarray
    variance: np.ndarray


def _layer_shapes(spec: DenseNetSpec) -> list[tuple[int, int]]:
    shapes = [(spec.input_dim, spec.initial_features)]
    shapes += [(w, spec.growth_rate) for w in spec.hidden_widths()]
    shapes.append((spec.final_width(), 2))
    return shapes


class DenseNet:
    """Parameter container plus forward/backward passes.

    Parameters live in one flat vector; per-layer weight and bias arrays are
    reshaped views into it, so the fused optimizer updates the whole model in
    a single call.
    """

    def __init__(self, spec: DenseNetSpec, params: np.ndarray, dtype):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        if params.dtype != self.dtype or params.ndim != 1:
            raise ValueError("params must be a flat vector of the model dtype")
        if params.size != spec.param_count():
            raise ValueError(
                f"expected {spec.param_count()} parameters, got {params.size}"
            )
        self.params = params
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        shapes = _layer_shapes(spec)
        w_off, b_off = [], []
        offset = 0
        for fan_in, fan_out in shapes:
            w_off.append(offset)
            self.weights.append(params[offset:offset + fan_in * fan_out].reshape(fan_in, fan_out))
            offset += fan_in * fan_out
            b_off.append(offset)
            self.biases.append(params[offset:offset + fan_out])
            offset += fan_out
        # flat layout descriptors consumed by the fused kernel passes
        self._w_off = np.array(w_off, dtype=np.int64)
        self._b_off = np.array(b_off, dtype=np.int64)
        self._fan_in = np.array([s[0] for s in shapes], dtype=np.int64)
        self._fan_out = np.array([s[1] for s in shapes], dtype=np.int64)

    @classmethod
    def initialize(cls, spec: DenseNetSpec, seed: int, dtype=np.float32) -> "DenseNet":
        """He-normal hidden weights, small head, variance bias at softplus^-1(1)."""
        dtype = np.dtype(dtype)
        rng = child_rng(seed, "init")
        params = np.empty(spec.param_count(), dtype=dtype)
        net = cls(spec, params, dtype)
        shapes = _layer_shapes(spec)
        for i, (fan_in, fan_out) in enumerate(shapes):
            is_head = i == len(shapes) - 1
            scale = 0.1 / np.sqrt(fan_in) if is_head else np.sqrt(2.0 / fan_in)
            w = rng.standard_normal((fan_in, fan_out), dtype=np.float64) * scale
            net.weights[i][...] = w.astype(dtype)
            net.biases[i][...] = 0
        # start with unit predicted variance in normalized target units
        net.biases[-1][1] = np.log(np.expm1(1.0))
        return net

    def clone_params(self) -> np.ndarray:
        return self.params.copy()

    def _forward_chunk(self, x: np.ndarray, train_mode: bool, rng):
        # activations live transposed, (features, rows) C-order: layer blocks
        # are contiguous rows, so the fused passes stream through them with
        # plain pointer arithmetic
        spec = self.spec
        n = x.shape[0]
        dropout = train_mode and spec.drop_rate > 0.0
        xT = np.ascontiguousarray(x.T)
        acts = np.empty((spec.final_width(), n), dtype=self.dtype)
        head = np.empty((2, n), dtype=self.dtype)
        var = np.empty(n, dtype=self.dtype)
        u = rng.random(acts.shape, dtype=self.dtype) if dropout else None
        K.dense_forward(self.params, self._w_off, self._b_off, self._fan_in,
                        self._fan_out, xT, acts, head, var, u, dropout,
                        1.0 - spec.drop_rate, spec.variance_floor)
        return head[0], head[1], var, acts, xT

    def forward(self, x: np.ndarray, train_mode: bool = False,
                rng: np.random.Generator | None = None) -> MemberPrediction:
        """Run the network; dropout is active only in train mode."""
        x = self._check_input(x)
        if train_mode and self.spec.drop_rate > 0.0 and rng is None:
            raise ValueError("train-mode forward with dropout needs an rng")
        means, varis = [], []
        for lo in range(0, x.shape[0], MAX_ROWS_PER_PASS):
            m, _, v, _, _ = self._forward_chunk(x[lo:lo + MAX_ROWS_PER_PASS], train_mode, rng)
            means.append(m)
            varis.append(v)
        return MemberPrediction(np.concatenate(means), np.concatenate(varis))

    def _check_input(self, x) -> np.ndarray:
        x = np.ascontiguousarray(x, dtype=self.dtype)
        if x.ndim != 2 or x.shape[1] != self.spec.input_dim:
            raise ValueError(
                f"input must be (n, {self.spec.input_dim}), got {x.shape}"
            )
        return x

    def make_grad_buffer(self) -> np.ndarray:
        return np.zeros_like(self.params)

    def loss_and_grads(self, x: np.ndarray, y: np.ndarray, train_mode: bool = True,
                       rng: np.random.Generator | None = None, grad_buffer=None):
        """Mean Gaussian NLL over the batch and its exact parameter gradient.

        Returns ``(loss_mean, grads, sq_residual_sum)`` where grads has the
        flat layout of `params`.  Accumulates over row chunks so arbitrarily
        large batches use bounded memory; pass a reusable ``grad_buffer``
        from `make_grad_buffer` to avoid per-step allocation.
        """
        x = self._check_input(x)
        y = np.ascontiguousarray(y, dtype=self.dtype)
        n_total = x.shape[0]
        if y.shape != (n_total,):
            raise ValueError(f"targets must be ({n_total},), got {y.shape}")
        grads = grad_buffer if grad_buffer is not None else self.make_grad_buffer()
        loss_sum = 0.0
        sq_sum = 0.0
        scale = 1.0 / n_total
        for chunk, lo in enumerate(range(0, n_total, MAX_ROWS_PER_PASS)):
            xc, yc = x[lo:lo + MAX_ROWS_PER_PASS], y[lo:lo + MAX_ROWS_PER_PASS]
            loss_sum, sq_sum = self._backward_chunk(
                xc, yc, train_mode, rng, grads, scale, loss_sum, sq_sum,
                accumulate=chunk > 0,
            )
        return loss_sum / n_total, grads, sq_sum

    def _backward_chunk(self, x, y, train_mode, rng, grads, scale, loss_sum,
                        sq_sum, accumulate: bool):
        spec = self.spec
        mean, raw, var, acts, xT = self._forward_chunk(x, train_mode, rng)
        dmu = np.empty_like(mean)
        dvar = np.empty_like(var)
        loss_sum += K.gaussian_nll(mean, var, y, dmu, dvar, scale)
        r = mean - y
        sq_sum += float(np.dot(r, r))
        K.sigmoid_scale_(dvar, raw)

        dhead = np.empty((2, x.shape[0]), dtype=self.dtype)
        dhead[0] = dmu
        dhead[1] = dvar
        dacts = np.empty_like(acts)
        dropout = train_mode and spec.drop_rate > 0.0
        # every layer is visited exactly once per chunk, so the first chunk
        # writes its gradients straight into the buffer (no zero-fill pass)
        K.dense_backward(self.params, grads, self._w_off, self._b_off,
                         self._fan_in, self._fan_out, xT, acts, dacts, dhead,
                         dropout, 1.0 - spec.drop_rate, accumulate)
        return loss_sum, sq_sum


def nll_loss(pred: MemberPrediction, y: np.ndarray):
    """Summed Gaussian negative log-likelihood and its prediction gradients.

    Returns ``(C, d_mean, d_variance)`` with
    ``C = sum_n [(y_n - mu_n)^2 / (2 var_n) + log(var_n) / 2]``.
    """
    mean = np.ascontiguousarray(pred.mean)
    var = np.ascontiguousarray(pred.variance, dtype=mean.dtype)
    y = np.ascontiguousarray(y, dtype=mean.dtype)
    if mean.shape != y.shape or var.shape != y.shape:
        raise ValueError("prediction and target shapes must match")
    dmu = np.empty_like(mean)
    dvar = np.empty_like(var)
    loss = K.gaussian_nll(mean, var, y, dmu, dvar, 1.0)
    if not np.isfinite(loss):
        raise FloatingPointError(
            f"non-finite NLL (loss={loss!r}, min var={var.min()!r})"
        )
    return loss, dmu, dvar


@dataclass
class TrainState:
    """Mutable training state: parameters, moments, counters, rng streams."""

    net: DenseNet
    moment1: np.ndarray
    moment2: np.ndarray
    epoch: int = 0
    step: int = 0
    aborted: bool = False

    @property
    def parameters(self) -> np.ndarray:
        return self.net.params


@dataclass
class TrainResult:
    state: TrainState
    train_rmse: list[float] = field(default_factory=list)
    val_rmse: list[float] = field(default_factory=list)
    train_nll: list[float] = field(default_factory=list)

    @property
    def final_val_rmse(self) -> float:
        return self.val_rmse[-1] if self.val_rmse else float("inf")


def train(spec: DenseNetSpec, train_data, val_data, cfg, epochs: int, seed: int,
          noise_injector=None, dtype=np.float32) -> TrainResult:
    """Minibatch AdamW training with per-epoch reshuffling and re-noising.

    ``train_data``/``val_data`` follow the small dataset protocol
    (`TrainingArrays` or `bode.fielddata.FrameData`): samples are rows for
    flat data and whole timesteps for field data.  When ``noise_injector`` is
    given it is called once per epoch with the epoch index (starting at 1)
    and must refresh the training targets in place.

    The per-epoch trace reports RMSE in raw target units (the training entry
    is accumulated from training-mode minibatch predictions, the validation
    entry from a deterministic inference pass).
    """
    net = DenseNet.initialize(spec, seed, dtype=dtype)
    state = TrainState(
        net=net,
        moment1=np.zeros_like(net.params),
        moment2=np.zeros_like(net.params),
    )
    shuffle_rng = child_rng(seed, "shuffle")
    dropout_rng = child_rng(seed, "dropout")
    result = TrainResult(state=state)

    val_x, val_y = val_data.all_rows()
    target_scale = float(getattr(train_data, "target_std", 1.0))
    snapshot = net.clone_params()
    grad_buffer = net.make_grad_buffer()

    for epoch in range(1, epochs + 1):
        if noise_injector is not None:
            noise_injector(epoch)
        order = shuffle_rng.permutation(train_data.n_samples)
        sq_sum = 0.0
        nll_sum = 0.0
        n_rows = 0
        diverged = False
        for lo in range(0, len(order), cfg.batch_size):
            xb, yb = train_data.rows(order[lo:lo + cfg.batch_size])
            loss, grads, sq = net.loss_and_grads(xb, yb, train_mode=True,
                                                 rng=dropout_rng, grad_buffer=grad_buffer)
            if not np.isfinite(loss):
                diverged = True
                break
            gnorm = float(np.sqrt(np.dot(grads, grads)))
            if gnorm > GRAD_CLIP_NORM:
                grads *= np.asarray(GRAD_CLIP_NORM / gnorm, dtype=grads.dtype)
            state.step += 1
            K.adamw_(
                net.params, grads, state.moment1, state.moment2,
                cfg.learning_rate, ADAM_BETA1, ADAM_BETA2, ADAM_EPS,
                cfg.weight_decay,
                1.0 - ADAM_BETA1**state.step, 1.0 - ADAM_BETA2**state.step,
            )
            sq_sum += sq
            nll_sum += loss * len(yb)
            n_rows += len(yb)
        if diverged:
            # restore the last finite end-of-epoch checkpoint
            net.params[...] = snapshot
            state.aborted = True
            break
        state.epoch = epoch
        snapshot[...] = net.params
        result.train_nll.append(nll_sum / max(n_rows, 1))
        result.train_rmse.append(float(np.sqrt(sq_sum / max(n_rows, 1))) * target_scale)
        val_pred = net.forward(val_x, train_mode=False)
        val_res = val_pred.mean.astype(np.float64) - val_y.astype(np.float64)
        result.val_rmse.append(float(np.sqrt(np.mean(val_res**2))) * target_scale)
    if state.aborted and state.epoch == 0:
        raise TrainingAborted("training diverged in the first epoch; no finite checkpoint")
    return result


class TrainingArrays:
    """Flat (row per sample) dataset adapter for `train`."""

    def __init__(self, x: np.ndarray, y: np.ndarray, target_std: float = 1.0,
                 dtype=np.float32):
        self.x = np.ascontiguousarray(x, dtype=dtype)
        self.y = np.ascontiguousarray(y, dtype=dtype)
        if self.x.ndim != 2 or len(self.x) != len(self.y):
            raise ValueError("x must be (n, d) with matching y")
        self.target_std = float(target_std)

    @property
    def n_samples(self) -> int:
        return len(self.y)

    @property
    def input_dim(self) -> int:
        return self.x.shape[1]

    def rows(self, indices) -> tuple[np.ndarray, np.ndarray]:
        return self.x[indices], self.y[indices]

    def all_rows(self) -> tuple[np.ndarray, np.ndarray]:
        return self.x, self.y


def save_checkpoint(path, net: DenseNet, config: dict, seed: int) -> None:
    """Binary parameter dump with a JSON header (spec + config + seed)."""
    header = json.dumps(
        {
            "spec": net.spec.to_dict(),
            "config": config,
            "seed": seed,
            "dtype": net.dtype.name,
        },
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        f.write(net.params.tobytes())


def load_checkpoint(path) -> tuple[DenseNet, dict]:
    with open(path, "rb") as f:
        magic = f.read(len(_CHECKPOINT_MAGIC))
        if magic != _CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a network checkpoint")
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen).decode("utf-8"))
        spec = DenseNetSpec.from_dict(header["spec"])
        dtype = np.dtype(header["dtype"])
        params = np.frombuffer(f.read(), dtype=dtype).copy()
    return DenseNet(spec, params, dtype), header
