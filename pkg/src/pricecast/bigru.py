"""Gated recurrent units: cell, sequence, bidirectional stack, output head.

Gate equations for one step with input ``x`` and previous state ``h``::

    r  = sigmoid(W_r x + U_r h + b_r)
    z  = sigmoid(W_z x + U_z h + b_z)
    hc = tanh(W_h x + U_h (r * h) + b_h)
    h' = (1 - z) * h + z * hc

Backward passes are hand-derived (backpropagation through time). Arrays
accept an optional leading batch axis: a step input is ``(in,)`` or
``(B, in)`` and a sequence is ``(T, in)`` or ``(B, T, in)``.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import NamedTuple, Optional

import numpy as np

from .errors import DimensionError
from .numeric import RngStream, as_tensor, glorot_uniform, sigmoid, softmax

PARAM_NAMES = ("w_r", "w_z", "w_h", "u_r", "u_z", "u_h", "b_r", "b_z", "b_h")


@dataclass
class GruCellParams:
    w_r: np.ndarray
    w_z: np.ndarray
    w_h: np.ndarray
    u_r: np.ndarray
    u_z: np.ndarray
    u_h: np.ndarray
    b_r: np.ndarray
    b_z: np.ndarray
    b_h: np.ndarray

    def __post_init__(self):
        hidden, inp = self.w_r.shape
        for name in PARAM_NAMES:
            arr = getattr(self, name)
            want = {"w": (hidden, inp), "u": (hidden, hidden), "b": (hidden,)}[name[0]]
            if arr.shape != want:
                raise DimensionError(f"GRU parameter {name} has shape {arr.shape}, expected {want}")

    @property
    def input_dim(self) -> int:
        return self.w_r.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.w_r.shape[0]

    @classmethod
    def zeros(cls, input_dim: int, hidden_dim: int) -> "GruCellParams":
        return cls(**{n: np.zeros(_shape(n, input_dim, hidden_dim)) for n in PARAM_NAMES})

    @classmethod
    def glorot(cls, input_dim: int, hidden_dim: int, rng: RngStream) -> "GruCellParams":
        out = {}
        for n in PARAM_NAMES:
            shape = _shape(n, input_dim, hidden_dim)
            if n[0] == "b":
                out[n] = np.zeros(shape)
            else:
                out[n] = glorot_uniform(rng.child(n), shape, fan_in=shape[1], fan_out=shape[0])
        return cls(**out)

    def as_dict(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _shape(name: str, input_dim: int, hidden_dim: int) -> tuple[int, ...]:
    return {"w": (hidden_dim, input_dim), "u": (hidden_dim, hidden_dim), "b": (hidden_dim,)}[name[0]]


class CellCache(NamedTuple):
    x: np.ndarray
    h_prev: np.ndarray
    r: np.ndarray
    z: np.ndarray
    hc: np.ndarray


def _cell_forward(p: GruCellParams, x: np.ndarray, h: np.ndarray) -> tuple[np.ndarray, CellCache]:
    r = sigmoid(x @ p.w_r.T + h @ p.u_r.T + p.b_r)
    z = sigmoid(x @ p.w_z.T + h @ p.u_z.T + p.b_z)
    hc = np.tanh(x @ p.w_h.T + (r * h) @ p.u_h.T + p.b_h)
    h_new = (1.0 - z) * h + z * hc
    return h_new, CellCache(x, h, r, z, hc)


def _cell_backward(p: GruCellParams, c: CellCache, dh_new: np.ndarray, grads: dict[str, np.ndarray]):
    """Accumulates parameter grads into ``grads``; returns (dx, dh_prev)."""
    dhc = dh_new * c.z
    dz = dh_new * (c.hc - c.h_prev)
    dh = dh_new * (1.0 - c.z)

    da_h = dhc * (1.0 - c.hc**2)
    rh = c.r * c.h_prev
    grads["w_h"] += da_h.T @ c.x
    grads["u_h"] += da_h.T @ rh
    grads["b_h"] += da_h.sum(axis=0)
    drh = da_h @ p.u_h
    dr = drh * c.h_prev
    dh += drh * c.r

    da_z = dz * c.z * (1.0 - c.z)
    da_r = dr * c.r * (1.0 - c.r)
    grads["w_z"] += da_z.T @ c.x
    grads["u_z"] += da_z.T @ c.h_prev
    grads["b_z"] += da_z.sum(axis=0)
    grads["w_r"] += da_r.T @ c.x
    grads["u_r"] += da_r.T @ c.h_prev
    grads["b_r"] += da_r.sum(axis=0)

    dx = da_h @ p.w_h + da_z @ p.w_z + da_r @ p.w_r
    dh += da_z @ p.u_z + da_r @ p.u_r
    return dx, dh


def _zero_grads(p: GruCellParams) -> dict[str, np.ndarray]:
    return {n: np.zeros_like(getattr(p, n)) for n in PARAM_NAMES}


def gru_cell_forward(params: GruCellParams, x_t, h_prev) -> tuple[np.ndarray, CellCache]:
    x_t = as_tensor(x_t)
    h_prev = as_tensor(h_prev)
    squeeze = x_t.ndim == 1
    xb, hb = (x_t[None], h_prev[None]) if squeeze else (x_t, h_prev)
    if xb.shape[-1] != params.input_dim or hb.shape[-1] != params.hidden_dim or xb.shape[0] != hb.shape[0]:
        raise DimensionError(
            f"GRU cell ({params.input_dim}->{params.hidden_dim}) got x {x_t.shape}, h {h_prev.shape}"
        )
    h, cache = _cell_forward(params, xb, hb)
    return (h[0] if squeeze else h), cache


def gru_cell_backward(params: GruCellParams, cache: CellCache, grad_h):
    """Single-step gradients: ``(grad_x, grad_h_prev, grad_params)``."""
    g = as_tensor(grad_h)
    squeeze = g.ndim == 1
    grads = _zero_grads(params)
    dx, dh = _cell_backward(params, cache, g[None] if squeeze else g, grads)
    if squeeze:
        dx, dh = dx[0], dh[0]
    return dx, dh, grads


class SequenceCache(NamedTuple):
    params: GruCellParams
    xs: np.ndarray  # (B, T, in)
    h_prev: np.ndarray  # (B, T, H): state entering each step
    r: np.ndarray
    z: np.ndarray
    hc: np.ndarray
    squeeze: bool

    @property
    def steps(self) -> int:
        return self.xs.shape[1]


def gru_sequence_forward(params: GruCellParams, xs, h0=None) -> tuple[np.ndarray, SequenceCache]:
    """Runs the cell over time; ``hs[t]`` is the state after consuming ``xs[t]``."""
    xs = as_tensor(xs)
    squeeze = xs.ndim == 2
    xb = xs[None] if squeeze else xs
    if xb.ndim != 3:
        raise DimensionError(f"expected (T, in) or (B, T, in) sequence, got {xs.shape}")
    if xb.shape[1] == 0:
        raise DimensionError("cannot run a GRU over an empty sequence")
    if xb.shape[2] != params.input_dim:
        raise DimensionError(f"GRU expects input width {params.input_dim}, got {xs.shape}")
    b, t, _ = xb.shape
    hidden = params.hidden_dim
    h = np.zeros((b, hidden)) if h0 is None else np.broadcast_to(as_tensor(h0), (b, hidden))
    # Input projections do not depend on the recurrence; compute them for all steps at once.
    xr = xb @ params.w_r.T + params.b_r
    xz = xb @ params.w_z.T + params.b_z
    xh = xb @ params.w_h.T + params.b_h
    h_prev = np.empty((b, t, hidden))
    r_all = np.empty((b, t, hidden))
    z_all = np.empty((b, t, hidden))
    hc_all = np.empty((b, t, hidden))
    hs = np.empty((b, t, hidden))
    for i in range(t):
        h_prev[:, i] = h
        r = sigmoid(xr[:, i] + h @ params.u_r.T)
        z = sigmoid(xz[:, i] + h @ params.u_z.T)
        hc = np.tanh(xh[:, i] + (r * h) @ params.u_h.T)
        h = (1.0 - z) * h + z * hc
        r_all[:, i], z_all[:, i], hc_all[:, i], hs[:, i] = r, z, hc, h
    cache = SequenceCache(params, xb, h_prev, r_all, z_all, hc_all, squeeze)
    return (hs[0] if squeeze else hs), cache


def gru_sequence_backward(cache: SequenceCache, grad_hs):
    """BPTT over one direction: returns ``(grad_xs, grad_h0, grad_params)``."""
    p = cache.params
    g = as_tensor(grad_hs)
    g = g[None] if cache.squeeze else g
    b, t, hidden = cache.h_prev.shape
    if g.shape != (b, t, hidden):
        raise DimensionError(f"grad_hs shape {g.shape} does not match sequence output {(b, t, hidden)}")
    da_r = np.empty((b, t, hidden))
    da_z = np.empty((b, t, hidden))
    da_h = np.empty((b, t, hidden))
    dh = np.zeros((b, hidden))
    for i in reversed(range(t)):
        h, r, z, hc = cache.h_prev[:, i], cache.r[:, i], cache.z[:, i], cache.hc[:, i]
        dh_new = g[:, i] + dh
        a_h = dh_new * z * (1.0 - hc * hc)
        drh = a_h @ p.u_h
        a_z = dh_new * (hc - h) * z * (1.0 - z)
        a_r = drh * h * r * (1.0 - r)
        dh = dh_new * (1.0 - z) + drh * r + a_z @ p.u_z + a_r @ p.u_r
        da_r[:, i], da_z[:, i], da_h[:, i] = a_r, a_z, a_h
    x2 = cache.xs.reshape(b * t, -1)
    h2 = cache.h_prev.reshape(b * t, hidden)
    r2, z2, h_2 = (a.reshape(b * t, hidden) for a in (da_r, da_z, da_h))
    rh2 = (cache.r * cache.h_prev).reshape(b * t, hidden)
    grads = {
        "w_r": r2.T @ x2, "w_z": z2.T @ x2, "w_h": h_2.T @ x2,
        "u_r": r2.T @ h2, "u_z": z2.T @ h2, "u_h": h_2.T @ rh2,
        "b_r": r2.sum(axis=0), "b_z": z2.sum(axis=0), "b_h": h_2.sum(axis=0),
    }
    dxs = da_r @ p.w_r + da_z @ p.w_z + da_h @ p.w_h
    if cache.squeeze:
        return dxs[0], dh[0], grads
    return dxs, dh, grads


@dataclass
class BiGruStack:
    """Layers of (forward cell, backward cell); backward is ``None`` for a unidirectional stack."""

    layers: list[tuple[GruCellParams, Optional[GruCellParams]]]

    def __post_init__(self):
        for i, (fwd, bwd) in enumerate(self.layers):
            if bwd is not None and (bwd.input_dim, bwd.hidden_dim) != (fwd.input_dim, fwd.hidden_dim):
                raise DimensionError(f"layer {i}: forward and backward cells disagree in shape")
            if i > 0 and fwd.input_dim != self.output_width_of(i - 1):
                raise DimensionError(f"layer {i} input width {fwd.input_dim} != previous output {self.output_width_of(i - 1)}")

    @property
    def bidirectional(self) -> bool:
        return self.layers[0][1] is not None

    def output_width_of(self, i: int) -> int:
        fwd, bwd = self.layers[i]
        return fwd.hidden_dim * (2 if bwd is not None else 1)

    @property
    def output_width(self) -> int:
        return self.output_width_of(len(self.layers) - 1)

    @classmethod
    def glorot(cls, input_dim: int, hidden_dim: int, num_layers: int, bidirectional: bool, rng: RngStream):
        layers = []
        width = input_dim
        for i in range(num_layers):
            fwd = GruCellParams.glorot(width, hidden_dim, rng.child(f"layer{i}/fwd"))
            bwd = GruCellParams.glorot(width, hidden_dim, rng.child(f"layer{i}/bwd")) if bidirectional else None
            layers.append((fwd, bwd))
            width = hidden_dim * (2 if bidirectional else 1)
        return cls(layers)


class BiGruCache(NamedTuple):
    layers: list  # per layer: (fwd SequenceCache, bwd SequenceCache | None)
    squeeze: bool


def bigru_forward(stack: BiGruStack, xs) -> tuple[np.ndarray, BiGruCache]:
    """Concatenates the forward-time states with the (re-reversed) backward-time states, per layer."""
    xs = as_tensor(xs)
    squeeze = xs.ndim == 2
    h = xs[None] if squeeze else xs
    caches = []
    for fwd, bwd in stack.layers:
        hf, cf = gru_sequence_forward(fwd, h)
        if bwd is None:
            caches.append((cf, None))
            h = hf
            continue
        hb, cb = gru_sequence_forward(bwd, h[:, ::-1, :])
        h = np.concatenate([hf, hb[:, ::-1, :]], axis=-1)
        caches.append((cf, cb))
    return (h[0] if squeeze else h), BiGruCache(caches, squeeze)


def bigru_backward(cache: BiGruCache, grad_ys):
    """Returns ``(grad_xs, grads)`` where ``grads[i]`` is ``(fwd_grads, bwd_grads | None)``."""
    g = as_tensor(grad_ys)
    g = g[None] if cache.squeeze else g
    layer_grads = []
    for cf, cb in reversed(cache.layers):
        hidden = cf.params.hidden_dim
        width = hidden * (2 if cb is not None else 1)
        if g.shape[-1] != width or g.shape[1] != cf.steps:
            raise DimensionError(f"grad_ys shape {g.shape} does not match layer output width {width}")
        dx, _, gf = gru_sequence_backward(cf, g[..., :hidden])
        gb = None
        if cb is not None:
            dxr, _, gb = gru_sequence_backward(cb, g[:, ::-1, hidden:])
            dx = dx + dxr[:, ::-1, :]
        layer_grads.append((gf, gb))
        g = dx
    layer_grads.reverse()
    return (g[0] if cache.squeeze else g), layer_grads


@dataclass
class OutputHead:
    """Affine readout ``V h + c`` with identity (regression) or softmax activation."""

    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "identity"

    def __post_init__(self):
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise DimensionError(f"head weight {self.weight.shape} and bias {self.bias.shape} disagree")
        if self.activation not in ("identity", "softmax"):
            raise DimensionError(f"unknown head activation {self.activation!r}")


def output_head_forward(head: OutputHead, features) -> np.ndarray:
    features = as_tensor(features)
    if features.shape[-1] != head.weight.shape[1]:
        raise DimensionError(f"head {head.weight.shape} cannot take features of shape {features.shape}")
    z = features @ head.weight.T + head.bias
    return softmax(z, axis=-1) if head.activation == "softmax" else z


def output_head_backward(head: OutputHead, features, y, grad_y):
    """Gradients ``(grad_features, grad_V, grad_c)`` given the forward output ``y``."""
    features = as_tensor(features)
    g = as_tensor(grad_y)
    if head.activation == "softmax":
        g = y * (g - np.sum(g * y, axis=-1, keepdims=True))
    fb = features[None] if features.ndim == 1 else features
    gb = g[None] if g.ndim == 1 else g
    grad_f = gb @ head.weight
    return (grad_f[0] if features.ndim == 1 else grad_f), gb.T @ fb, gb.sum(axis=0)
