"""CNN -> BiGRU -> flatten -> dense forecaster and its SGD training loop.

Network layout for a ``(window_len, F)`` input window::

    conv(k, same, c1) -> ReLU -> maxpool(2, 2)
    conv(k, same, c2) -> ReLU -> maxpool(2, 2)
    conv(k, same, c3) -> ReLU
    BiGRU x gru_layers (concatenated directions)
    flatten -> dense -> horizon outputs

Parameters live in one ordered ``dict`` of float64 arrays keyed by dotted
names (``conv0.weight``, ``gru1.bwd.u_h``, ``head.bias`` ...), which keeps
SGD, snapshots and checkpointing uniform.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, replace
from typing import NamedTuple, Optional

import numpy as np

from .bigru import PARAM_NAMES, BiGruStack, GruCellParams, bigru_backward, bigru_forward
from .cnn import (
    ConvLayer,
    DenseLayer,
    PoolSpec,
    conv1d_backward,
    conv1d_forward,
    dense_backward,
    dense_forward,
    flatten,
    maxpool_backward,
    maxpool_forward,
    relu_backward,
    relu_forward,
    unflatten,
)
from .errors import ConfigError, DimensionError, SchemaError, TrainingError
from .numeric import RngStream, as_tensor, glorot_uniform
from .preprocess import MinMaxScaler, WindowedDataset

log = logging.getLogger(__name__)

MIN_DELTA = 1e-9


@dataclass(frozen=True)
class HyperParams:
    learning_rate: float = 0.001
    batch_size: int = 64
    max_epochs: int = 100
    conv_channels: tuple[int, int, int] = (16, 32, 64)
    kernel_len: int = 3
    gru_hidden: int = 64
    gru_layers: int = 2
    window_len: int = 30
    horizon: int = 7
    bidirectional: bool = True
    patience: int = 10
    early_stopping: bool = True
    pool_size: int = 2
    pool_stride: int = 2
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "conv_channels", tuple(int(c) for c in self.conv_channels))
        self.validate()

    def validate(self):
        positive = {
            "learning_rate": self.learning_rate, "batch_size": self.batch_size, "max_epochs": self.max_epochs,
            "kernel_len": self.kernel_len, "gru_hidden": self.gru_hidden, "gru_layers": self.gru_layers,
            "window_len": self.window_len, "horizon": self.horizon, "patience": self.patience,
            "pool_size": self.pool_size, "pool_stride": self.pool_stride,
        }
        for name, value in positive.items():
            if not value > 0:
                raise ConfigError(f"hyperparameter {name} must be positive, got {value}")
        if len(self.conv_channels) != 3 or min(self.conv_channels) < 1:
            raise ConfigError(f"conv_channels must be three positive ints, got {self.conv_channels}")
        if self.kernel_len > self.window_len:
            raise ConfigError(f"kernel_len {self.kernel_len} exceeds window_len {self.window_len}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        t = self.window_len
        for _ in range(2):
            if t < self.pool_size:
                raise ConfigError(f"window_len {self.window_len} too short for two pooling stages")
            t = (t - self.pool_size) // self.pool_stride + 1

    @property
    def sequence_len(self) -> int:
        """Time steps reaching the GRU after two pooling stages."""
        pool = PoolSpec(self.pool_size, self.pool_stride)
        return pool.output_length(pool.output_length(self.window_len))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_channels"] = list(self.conv_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "HyperParams":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown hyperparameter keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class ModelState:
    hp: HyperParams
    feature_dim: int
    params: dict[str, np.ndarray]

    @property
    def pool(self) -> PoolSpec:
        return PoolSpec(self.hp.pool_size, self.hp.pool_stride)

    def conv(self, i: int) -> ConvLayer:
        return ConvLayer(self.params[f"conv{i}.weight"], self.params[f"conv{i}.bias"], "same")

    @property
    def gru_stack(self) -> BiGruStack:
        layers = []
        for i in range(self.hp.gru_layers):
            fwd = GruCellParams(**{n: self.params[f"gru{i}.fwd.{n}"] for n in PARAM_NAMES})
            bwd = None
            if self.hp.bidirectional:
                bwd = GruCellParams(**{n: self.params[f"gru{i}.bwd.{n}"] for n in PARAM_NAMES})
            layers.append((fwd, bwd))
        return BiGruStack(layers)

    @property
    def head(self) -> DenseLayer:
        return DenseLayer(self.params["head.weight"], self.params["head.bias"])

    @property
    def gru_output_width(self) -> int:
        return self.hp.gru_hidden * (2 if self.hp.bidirectional else 1)

    def copy(self) -> "ModelState":
        return ModelState(self.hp, self.feature_dim, {k: v.copy() for k, v in self.params.items()})

    def num_parameters(self) -> int:
        return sum(v.size for v in self.params.values())


def parameter_shapes(hp: HyperParams, feature_dim: int) -> dict[str, tuple[int, ...]]:
    """Expected name -> shape map for a model with these hyperparameters."""
    shapes: dict[str, tuple[int, ...]] = {}
    in_ch = feature_dim
    for i, out_ch in enumerate(hp.conv_channels):
        shapes[f"conv{i}.weight"] = (out_ch, in_ch, hp.kernel_len)
        shapes[f"conv{i}.bias"] = (out_ch,)
        in_ch = out_ch
    width = in_ch
    directions = ("fwd", "bwd") if hp.bidirectional else ("fwd",)
    for i in range(hp.gru_layers):
        for d in directions:
            for n in PARAM_NAMES:
                shapes[f"gru{i}.{d}.{n}"] = {
                    "w": (hp.gru_hidden, width), "u": (hp.gru_hidden, hp.gru_hidden), "b": (hp.gru_hidden,)
                }[n[0]]
        width = hp.gru_hidden * len(directions)
    shapes["head.weight"] = (hp.horizon, hp.sequence_len * width)
    shapes["head.bias"] = (hp.horizon,)
    return shapes


def build_model(hp: HyperParams, feature_dim: int, rng: Optional[RngStream] = None) -> ModelState:
    """Glorot-uniform weights and zero biases, deterministic for a given stream."""
    if feature_dim < 1:
        raise ConfigError(f"feature_dim must be >= 1, got {feature_dim}")
    rng = RngStream(hp.seed) if rng is None else rng
    params = {}
    for name, shape in parameter_shapes(hp, feature_dim).items():
        if name.endswith("bias") or name.split(".")[-1].startswith("b_"):
            params[name] = np.zeros(shape)
        elif name.startswith("conv"):
            out_ch, in_ch, k = shape
            params[name] = glorot_uniform(rng.child(name), shape, fan_in=in_ch * k, fan_out=out_ch * k)
        else:
            params[name] = glorot_uniform(rng.child(name), shape, fan_in=shape[1], fan_out=shape[0])
    return ModelState(hp, feature_dim, params)


class ForwardCache(NamedTuple):
    conv: list
    relu: list
    pool: list
    gru: object
    seq_shape: tuple
    head: object
    squeeze: bool


def forward(model: ModelState, window) -> tuple[np.ndarray, ForwardCache]:
    """Prediction of shape ``(horizon,)`` for one window, or ``(B, horizon)`` for a batch."""
    x = as_tensor(window)
    squeeze = x.ndim == 2
    x = x[None] if squeeze else x
    hp = model.hp
    if x.ndim != 3 or x.shape[1:] != (hp.window_len, model.feature_dim):
        raise DimensionError(f"model expects windows of shape ({hp.window_len}, {model.feature_dim}), got {window.shape}")
    conv_c, relu_c, pool_c = [], [], []
    a = x
    for i in range(3):
        z, c = conv1d_forward(model.conv(i), a)
        conv_c.append(c)
        a, zc = relu_forward(z)
        relu_c.append(zc)
        if i < 2:
            a, pc = maxpool_forward(model.pool, a)
            pool_c.append(pc)
    seq, gru_c = bigru_forward(model.gru_stack, a)
    flat = flatten(seq)
    pred, head_c = dense_forward(model.head, flat)
    cache = ForwardCache(conv_c, relu_c, pool_c, gru_c, seq.shape[1:], head_c, squeeze)
    return (pred[0] if squeeze else pred), cache


def backward(model: ModelState, cache: ForwardCache, grad_pred) -> dict[str, np.ndarray]:
    """Parameter gradients, summed over the batch axis of ``grad_pred``."""
    g = as_tensor(grad_pred)
    g = g[None] if cache.squeeze else g
    grads: dict[str, np.ndarray] = {}
    g_flat, grads["head.weight"], grads["head.bias"] = dense_backward(cache.head, g)
    g_seq = unflatten(g_flat, cache.seq_shape)
    g_a, layer_grads = bigru_backward(cache.gru, g_seq)
    for i, (gf, gb) in enumerate(layer_grads):
        for n in PARAM_NAMES:
            grads[f"gru{i}.fwd.{n}"] = gf[n]
            if gb is not None:
                grads[f"gru{i}.bwd.{n}"] = gb[n]
    for i in reversed(range(3)):
        if i < 2:
            g_a = maxpool_backward(cache.pool[i], g_a)
        g_z = relu_backward(cache.relu[i], g_a)
        g_a, grads[f"conv{i}.weight"], grads[f"conv{i}.bias"] = conv1d_backward(cache.conv[i], g_z)
    return {k: grads[k] for k in model.params}


def mse_loss(pred, target) -> tuple[float, np.ndarray]:
    """Mean squared error over every element and its gradient w.r.t. ``pred``."""
    pred = as_tensor(pred)
    target = as_tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(f"prediction shape {pred.shape} != target shape {target.shape}")
    diff = pred - target
    return float(np.mean(diff**2)), 2.0 * diff / diff.size


def sgd_step(model: ModelState, grads: dict[str, np.ndarray], lr: float) -> ModelState:
    """Plain SGD: ``theta <- theta - lr * grad``; returns a new state."""
    if set(grads) != set(model.params):
        raise DimensionError(f"gradient names do not match parameters: {sorted(set(grads) ^ set(model.params))}")
    new = {}
    for name, p in model.params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise DimensionError(f"gradient for {name} has shape {g.shape}, parameter has {p.shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name}")
        new[name] = p - lr * g
    return ModelState(model.hp, model.feature_dim, new)


def predict_scaled(model: ModelState, inputs: np.ndarray, chunk: int = 512) -> np.ndarray:
    """Batched forward pass over ``(N, window_len, F)`` inputs; no caches kept."""
    out = np.empty((inputs.shape[0], model.hp.horizon))
    for s in range(0, inputs.shape[0], chunk):
        out[s:s + chunk] = forward(model, inputs[s:s + chunk])[0]
    return out


def evaluate_mse(model: ModelState, ds: WindowedDataset) -> float:
    return mse_loss(predict_scaled(model, ds.inputs), ds.targets)[0]


class EarlyStopping:
    """Tracks the best validation loss; an improvement must beat it by more than ``min_delta``."""

    def __init__(self, patience: int, min_delta: float = MIN_DELTA):
        if patience < 1:
            raise ConfigError(f"patience must be >= 1, got {patience}")
        self.patience = patience
        self.min_delta = min_delta
        self.best = np.inf
        self.best_epoch = 0
        self.bad_epochs = 0

    def update(self, epoch: int, val_loss: float) -> tuple[bool, bool]:
        """Returns ``(improved, should_stop)``."""
        if val_loss < self.best - self.min_delta:
            self.best, self.best_epoch, self.bad_epochs = val_loss, epoch, 0
            return True, False
        self.bad_epochs += 1
        return False, self.bad_epochs >= self.patience


@dataclass
class TrainReport:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False
    wall_time_s: float = 0.0

    @property
    def epochs_completed(self) -> int:
        return len(self.train_loss)

    @property
    def best_val_loss(self) -> float:
        return self.val_loss[self.best_epoch - 1] if self.best_epoch else float("inf")

    def to_dict(self) -> dict:
        # Wall time is left out so reports stay byte-reproducible.
        return {
            "epochs_completed": self.epochs_completed,
            "best_epoch": self.best_epoch,
            "best_val_loss": self.best_val_loss,
            "stopped_early": self.stopped_early,
            "train_loss": list(self.train_loss),
            "val_loss": list(self.val_loss),
        }


def train(
    model: ModelState,
    train_ds: WindowedDataset,
    val_ds: WindowedDataset,
    hp: Optional[HyperParams] = None,
) -> tuple[ModelState, TrainReport]:
    """Mini-batch SGD on MSE with validation-based early stopping.

    Training windows are reshuffled every epoch from the run seed; each epoch
    ends with a validation pass. Returns the snapshot with the lowest
    validation loss (the final state when early stopping is disabled).
    """
    hp = model.hp if hp is None else hp
    if len(train_ds) == 0 or len(val_ds) == 0:
        raise TrainingError(f"training needs non-empty datasets, got train={len(train_ds)} val={len(val_ds)}")
    rng = RngStream(hp.seed).child("shuffle")
    stopper = EarlyStopping(hp.patience)
    report = TrainReport()
    best = model.copy()
    started = time.perf_counter()
    n = len(train_ds)
    for epoch in range(1, hp.max_epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for s in range(0, n, hp.batch_size):
            idx = order[s:s + hp.batch_size]
            pred, cache = forward(model, train_ds.inputs[idx])
            loss, grad = mse_loss(pred, train_ds.targets[idx])
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite training loss at epoch {epoch}, batch starting {s}")
            model = sgd_step(model, backward(model, cache, grad), hp.learning_rate)
            total += loss * len(idx)
        val = evaluate_mse(model, val_ds)
        if not np.isfinite(val):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}")
        report.train_loss.append(total / n)
        report.val_loss.append(val)
        improved, stop = stopper.update(epoch, val)
        if improved:
            best = model.copy()
        log.debug("epoch %d train %.6g val %.6g", epoch, total / n, val)
        if hp.early_stopping and stop:
            report.stopped_early = True
            break
    report.best_epoch = stopper.best_epoch
    report.wall_time_s = time.perf_counter() - started
    if not hp.early_stopping:
        best = model
    return best, report


def predict(model: ModelState, scaler: MinMaxScaler, frame_tail, target: str) -> np.ndarray:
    """Forecast ``horizon`` target values in original units from the last ``window_len`` rows.

    ``frame_tail`` is a DataFrame already encoded to the model's numeric
    feature columns (in scaler column order).
    """
    if len(frame_tail) != model.hp.window_len:
        raise SchemaError(f"predict needs exactly {model.hp.window_len} rows, got {len(frame_tail)}")
    if list(frame_tail.columns) != scaler.columns or len(scaler.columns) != model.feature_dim:
        raise SchemaError(f"input columns {list(frame_tail.columns)} do not match model features {scaler.columns}")
    x = scaler.transform(frame_tail).to_numpy(dtype=float)
    pred, _ = forward(model, x)
    return scaler.inverse_column(target, pred)


def replace_hp(hp: HyperParams, **changes) -> HyperParams:
    return replace(hp, **changes)
