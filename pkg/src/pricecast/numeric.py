"""Dense float64 primitives: matmul, activations and seeded random streams.

Tensors are plain ``numpy.ndarray`` objects of dtype float64; every function
here returns a fresh array and never mutates its inputs.
"""

from __future__ import annotations

import hashlib
from typing import Sequence

import numpy as np

from .errors import ConfigError, DimensionError

DTYPE = np.float64


def as_tensor(x) -> np.ndarray:
    return np.asarray(x, dtype=DTYPE)


def matmul(a, b) -> np.ndarray:
    """Matrix product of an ``m x k`` and a ``k x n`` tensor."""
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply shapes {a.shape} and {b.shape}")
    return a @ b


def sigmoid(x) -> np.ndarray:
    x = as_tensor(x)
    # exp(-x) may overflow to inf for very negative x; 1/inf -> 0 is the right limit.
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def tanh_act(x) -> np.ndarray:
    return np.tanh(as_tensor(x))


def relu(x) -> np.ndarray:
    return np.maximum(as_tensor(x), 0.0)


def softmax(x, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax along ``axis`` (max-subtracted)."""
    x = as_tensor(x)
    if x.size == 0 or x.shape[axis] == 0:
        raise DimensionError("softmax of an empty vector is undefined")
    e = np.exp(x - np.max(x, axis=axis, keepdims=True))
    return e / np.sum(e, axis=axis, keepdims=True)


def _label_key(label: str) -> int:
    return int.from_bytes(hashlib.blake2b(label.encode("utf-8"), digest_size=8).digest(), "little")


class RngStream:
    """Seeded counter-based random stream (Philox).

    Streams are single-owner. Use :meth:`child` to hand independent streams to
    other consumers: the child seed is a hash of the parent seed and the label,
    so children with distinct labels never share a key.
    """

    def __init__(self, seed: int, _key: Sequence[int] = ()):
        if not 0 <= int(seed) < 2**64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {seed}")
        self.seed = int(seed)
        self._key = tuple(_key)
        seq = np.random.SeedSequence([self.seed, *self._key])
        self._gen = np.random.Generator(np.random.Philox(seq))

    def child(self, label: str) -> "RngStream":
        return RngStream(self.seed, (*self._key, _label_key(label)))

    def derive_seed(self, label: str) -> int:
        """A 64-bit seed derived from this stream's identity and ``label``."""
        seq = np.random.SeedSequence([self.seed, *self._key, _label_key(label)])
        return int(seq.generate_state(1, dtype=np.uint64)[0])

    def uniform(self, lo: float, hi: float, shape=()) -> np.ndarray:
        if not lo < hi:
            raise ConfigError(f"uniform range requires lo < hi, got [{lo}, {hi})")
        u = self._gen.random(shape, dtype=DTYPE)
        out = lo + (hi - lo) * u
        # lo + (hi-lo)*u can round up to hi for u just below 1.
        return np.minimum(out, np.nextafter(hi, lo))

    def normal(self, mean: float = 0.0, std: float = 1.0, shape=()) -> np.ndarray:
        return self._gen.normal(mean, std, shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)


def rng_uniform(stream: RngStream, lo: float, hi: float, shape) -> np.ndarray:
    return stream.uniform(lo, hi, shape)


def glorot_uniform(stream: RngStream, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return stream.uniform(-limit, limit, shape)
