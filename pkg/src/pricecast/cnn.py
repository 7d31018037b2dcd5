"""1-D convolutional feature extractor: forward and analytic backward passes.

Layout convention: a single sample is ``(T, channels)``; a batch is
``(B, T, channels)``. Every function accepts either and returns the matching
rank. Convolution runs over the time axis with stride 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError
from .numeric import as_tensor


def _batched(x: np.ndarray) -> tuple[np.ndarray, bool]:
    if x.ndim == 2:
        return x[None], True
    if x.ndim == 3:
        return x, False
    raise DimensionError(f"expected (T, C) or (B, T, C) input, got shape {x.shape}")


@dataclass
class ConvLayer:
    weight: np.ndarray  # (out_ch, in_ch, kernel_len)
    bias: np.ndarray  # (out_ch,)
    padding: str = "same"

    def __post_init__(self):
        if self.weight.ndim != 3 or min(self.weight.shape) < 1:
            raise DimensionError(f"conv weight must be (out, in, kernel), got {self.weight.shape}")
        if self.bias.shape != (self.weight.shape[0],):
            raise DimensionError(f"conv bias shape {self.bias.shape} does not match weight {self.weight.shape}")
        if self.padding not in ("same", "valid"):
            raise DimensionError(f"unknown padding {self.padding!r}")

    @property
    def kernel_len(self) -> int:
        return self.weight.shape[2]

    def pad_widths(self) -> tuple[int, int]:
        if self.padding == "valid":
            return 0, 0
        # Even kernels put the extra zero on the right.
        left = (self.kernel_len - 1) // 2
        return left, self.kernel_len - 1 - left

    def output_length(self, t: int) -> int:
        return t if self.padding == "same" else t - self.kernel_len + 1


class ConvCache(NamedTuple):
    layer: ConvLayer
    patches: np.ndarray  # (B, T', in_ch, kernel_len)
    input_shape: tuple
    squeeze: bool


def conv1d_forward(layer: ConvLayer, x) -> tuple[np.ndarray, ConvCache]:
    """``z[t, o] = b[o] + sum_{c,k} W[o, c, k] * x_pad[t + k, c]``."""
    x, squeeze = _batched(as_tensor(x))
    out_ch, in_ch, k = layer.weight.shape
    if x.shape[2] != in_ch:
        raise DimensionError(f"conv expects {in_ch} input channels, got input shape {x.shape}")
    if layer.padding == "valid" and x.shape[1] < k:
        raise DimensionError(f"input length {x.shape[1]} shorter than kernel {k} with valid padding")
    left, right = layer.pad_widths()
    xp = np.pad(x, ((0, 0), (left, right), (0, 0)))
    patches = sliding_window_view(xp, k, axis=1)  # (B, T', in_ch, k)
    b, t_out = patches.shape[:2]
    z = (patches.reshape(b * t_out, in_ch * k) @ layer.weight.reshape(out_ch, in_ch * k).T).reshape(b, t_out, out_ch)
    z += layer.bias
    cache = ConvCache(layer, patches, x.shape, squeeze)
    return (z[0] if squeeze else z), cache


def conv1d_backward(cache: ConvCache, grad_z) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients w.r.t. input, weight and bias; weight/bias grads are summed over the batch."""
    layer = cache.layer
    g = as_tensor(grad_z)
    if cache.squeeze:
        g = g[None]
    expected = cache.patches.shape[:2] + (layer.weight.shape[0],)
    if g.shape != expected:
        raise DimensionError(f"grad_z shape {g.shape} does not match conv output {expected}")
    b, t, c = cache.input_shape
    out_ch, _, k = layer.weight.shape
    t_out = g.shape[1]
    g2 = g.reshape(b * t_out, out_ch)
    grad_w = (g2.T @ cache.patches.reshape(b * t_out, c * k)).reshape(layer.weight.shape)
    grad_b = g2.sum(axis=0)
    left, _ = layer.pad_widths()
    grad_xp = np.zeros((b, t + k - 1 if layer.padding == "same" else t, c))
    # dx_pad[t + j, c] += sum_o g[t, o] * W[o, c, j]
    contrib = (g2 @ layer.weight.reshape(out_ch, c * k)).reshape(b, t_out, c, k)
    for j in range(k):
        grad_xp[:, j:j + t_out, :] += contrib[:, :, :, j]
    grad_x = grad_xp[:, left:left + t, :]
    return (grad_x[0] if cache.squeeze else grad_x), grad_w, grad_b


def relu_forward(z) -> tuple[np.ndarray, np.ndarray]:
    z = as_tensor(z)
    return np.maximum(z, 0.0), z


def relu_backward(z_cache: np.ndarray, grad_a) -> np.ndarray:
    # Subgradient at exactly zero is taken as 0.
    return np.where(z_cache > 0, as_tensor(grad_a), 0.0)


@dataclass(frozen=True)
class PoolSpec:
    size: int = 2
    stride: int = 2

    def __post_init__(self):
        if self.size < 1 or self.stride < 1:
            raise DimensionError(f"pool size and stride must be positive, got {self.size}, {self.stride}")

    def output_length(self, t: int) -> int:
        if t < self.size:
            raise DimensionError(f"pool window {self.size} longer than input length {t}")
        return (t - self.size) // self.stride + 1


class PoolCache(NamedTuple):
    spec: PoolSpec
    argmax: np.ndarray  # absolute time index of each winner, (B, T', ch)
    input_shape: tuple
    squeeze: bool


def maxpool_forward(spec: PoolSpec, x) -> tuple[np.ndarray, PoolCache]:
    """Max over windows of ``size`` steps taken every ``stride`` steps; ties go to the earliest index."""
    x, squeeze = _batched(as_tensor(x))
    t_out = spec.output_length(x.shape[1])
    windows = sliding_window_view(x, spec.size, axis=1)[:, ::spec.stride][:, :t_out]  # (B, T', ch, f)
    local = np.argmax(windows, axis=-1)
    y = np.take_along_axis(windows, local[..., None], axis=-1)[..., 0]
    starts = (np.arange(t_out) * spec.stride)[None, :, None]
    cache = PoolCache(spec, local + starts, x.shape, squeeze)
    return (y[0] if squeeze else y), cache


def maxpool_backward(cache: PoolCache, grad_y) -> np.ndarray:
    g = as_tensor(grad_y)
    if cache.squeeze:
        g = g[None]
    if g.shape != cache.argmax.shape:
        raise DimensionError(f"grad_y shape {g.shape} does not match pool output {cache.argmax.shape}")
    b, t, c = cache.input_shape
    grad_x = np.zeros((b, t, c))
    bi = np.arange(b)[:, None, None]
    ci = np.arange(c)[None, None, :]
    np.add.at(grad_x, (np.broadcast_to(bi, g.shape), cache.argmax, np.broadcast_to(ci, g.shape)), g)
    return grad_x[0] if cache.squeeze else grad_x


def flatten(x) -> np.ndarray:
    """Row-major flatten of the trailing ``(T, ch)`` map; a leading batch axis is kept."""
    x = as_tensor(x)
    if x.ndim == 3:
        return x.reshape(x.shape[0], -1)
    return x.reshape(-1)


def unflatten(v, shape: tuple[int, int]) -> np.ndarray:
    v = as_tensor(v)
    if v.ndim == 2:
        return v.reshape((v.shape[0],) + tuple(shape))
    return v.reshape(shape)


@dataclass
class DenseLayer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)

    def __post_init__(self):
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise DimensionError(f"dense weight {self.weight.shape} and bias {self.bias.shape} disagree")


class DenseCache(NamedTuple):
    layer: DenseLayer
    x: np.ndarray  # (B, in)
    squeeze: bool


def dense_forward(layer: DenseLayer, x) -> tuple[np.ndarray, DenseCache]:
    x = as_tensor(x)
    squeeze = x.ndim == 1
    xb = x[None] if squeeze else x
    if xb.ndim != 2 or xb.shape[1] != layer.weight.shape[1]:
        raise DimensionError(f"dense layer {layer.weight.shape} cannot take input of shape {x.shape}")
    z = xb @ layer.weight.T + layer.bias
    return (z[0] if squeeze else z), DenseCache(layer, xb, squeeze)


def dense_backward(cache: DenseCache, grad_z) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    g = as_tensor(grad_z)
    g = g[None] if cache.squeeze else g
    if g.shape != (cache.x.shape[0], cache.layer.weight.shape[0]):
        raise DimensionError(f"grad_z shape {g.shape} does not match dense output")
    grad_x = g @ cache.layer.weight
    grad_w = g.T @ cache.x
    grad_b = g.sum(axis=0)
    return (grad_x[0] if cache.squeeze else grad_x), grad_w, grad_b
