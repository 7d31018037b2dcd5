"""Versioned text checkpoints.

The file is a JSON document. Parameter tensors are stored as a shape plus a
flat row-major list of floats written with 17 significant digits, which
round-trips every float64 exactly, so ``save -> load -> save`` is
byte-identical and a loaded model predicts bit-for-bit like the original.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import CheckpointError, ConfigError
from .io import atomic_write_text
from .model import HyperParams, ModelState, parameter_shapes
from .preprocess import MinMaxScaler, OneHotEncoder

FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    model: ModelState
    scaler: MinMaxScaler
    target: str
    input_columns: list[str]  # raw CSV columns the model was trained on (excluding date)
    categorical: list[str] = field(default_factory=list)
    encoder: Optional[OneHotEncoder] = None
    config: dict = field(default_factory=dict)
    best_epoch: int = 0

    @property
    def feature_columns(self) -> list[str]:
        return self.scaler.columns


def _float_text(v: float) -> str:
    s = format(float(v), ".17g")
    # Keep a float marker so "-0" and integral values load back as floats.
    if not any(ch in s for ch in ".en"):
        s += ".0"
    return s


def dumps(ckpt: Checkpoint) -> str:
    tensors = []
    blobs = []
    for i, (name, arr) in enumerate(ckpt.model.params.items()):
        tensors.append({"name": name, "shape": list(arr.shape), "data": f"@@tensor{i}@@"})
        blobs.append("[" + ", ".join(_float_text(v) for v in arr.ravel()) + "]")
    doc = {
        "format_version": FORMAT_VERSION,
        "target": ckpt.target,
        "input_columns": list(ckpt.input_columns),
        "categorical": list(ckpt.categorical),
        "feature_dim": ckpt.model.feature_dim,
        "best_epoch": ckpt.best_epoch,
        "hyperparams": ckpt.model.hp.to_dict(),
        "config": ckpt.config,
        "scaler": ckpt.scaler.to_dict(),
        "encoder": None if ckpt.encoder is None else ckpt.encoder.to_dict(),
        "tensors": tensors,
    }
    text = json.dumps(doc, indent=1, allow_nan=False)
    for i, blob in enumerate(blobs):
        text = text.replace(f'"@@tensor{i}@@"', blob, 1)
    return text + "\n"


def save(ckpt: Checkpoint, path) -> None:
    atomic_write_text(path, dumps(ckpt))


def loads(text: str, source: str = "<checkpoint>") -> Checkpoint:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{source}: unreadable or truncated checkpoint ({exc})") from None
    if not isinstance(doc, dict):
        raise CheckpointError(f"{source}: checkpoint root must be an object")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{source}: unsupported format_version {version!r} (expected {FORMAT_VERSION})")
    try:
        hp = HyperParams.from_dict({k: tuple(v) if k == "conv_channels" else v for k, v in doc["hyperparams"].items()})
        feature_dim = int(doc["feature_dim"])
        expected = parameter_shapes(hp, feature_dim)
        params = {}
        for t in doc["tensors"]:
            name = t["name"]
            shape = tuple(int(s) for s in t["shape"])
            data = np.asarray(t["data"], dtype=np.float64)
            if name not in expected:
                raise CheckpointError(f"{source}: unexpected tensor {name!r}")
            if int(np.prod(shape)) != data.size or shape != expected[name]:
                raise CheckpointError(
                    f"{source}: tensor {name!r} has shape {list(shape)} with {data.size} values; "
                    f"model expects {list(expected[name])}"
                )
            params[name] = data.reshape(shape)
        missing = [n for n in expected if n not in params]
        if missing:
            raise CheckpointError(f"{source}: missing tensors {missing}")
        params = {n: params[n] for n in expected}
        encoder = None if doc["encoder"] is None else OneHotEncoder.from_dict(doc["encoder"])
        return Checkpoint(
            model=ModelState(hp, feature_dim, params),
            scaler=MinMaxScaler.from_dict(doc["scaler"]),
            target=doc["target"],
            input_columns=list(doc["input_columns"]),
            categorical=list(doc["categorical"]),
            encoder=encoder,
            config=doc["config"],
            best_epoch=int(doc["best_epoch"]),
        )
    except (KeyError, TypeError, ValueError, ConfigError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"{source}: malformed checkpoint ({type(exc).__name__}: {exc})") from None


def load(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    return loads(path.read_text(encoding="utf-8"), str(path))
