"""Data preparation shared by the CLI subcommands.

read -> clean -> chronological split -> one-hot (fit on train) ->
min-max scale (fit on train) -> sliding windows cut per segment.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import pandas as pd

from .config import RunConfig
from .errors import ConfigError, DataError, SchemaError
from .io import read_csv
from .preprocess import (
    CleaningReport,
    MinMaxScaler,
    OneHotEncoder,
    TimeSeriesFrame,
    WindowedDataset,
    chrono_split,
    clean,
    make_windows,
)


@dataclass
class Prepared:
    raw: TimeSeriesFrame
    cleaned: TimeSeriesFrame
    cleaning: CleaningReport
    encoder: Optional[OneHotEncoder]
    scaler: MinMaxScaler
    segments: dict[str, TimeSeriesFrame]  # encoded, unscaled
    datasets: dict[str, WindowedDataset]  # scaled windows

    @property
    def input_columns(self) -> list[str]:
        return list(self.raw.data.columns)

    def split_summary(self) -> dict:
        out = {}
        for name, seg in self.segments.items():
            out[name] = {
                "rows": len(seg),
                "windows": len(self.datasets[name]),
                "first_date": seg.dates[0].strftime("%Y-%m-%d"),
                "last_date": seg.dates[-1].strftime("%Y-%m-%d"),
            }
        return out


def load_frame(cfg: RunConfig, data_path=None) -> TimeSeriesFrame:
    path = data_path if data_path is not None else cfg.data
    if path is None:
        raise ConfigError("no input data: pass --data or set 'data' in the config")
    return read_csv(path, cfg.target, cfg.categorical)


def encode_frame(frame: TimeSeriesFrame, encoder: Optional[OneHotEncoder]) -> TimeSeriesFrame:
    if encoder is None:
        return frame
    return frame.replace(encoder.transform(frame.data), categorical=())


def scale_frame(frame: TimeSeriesFrame, scaler: MinMaxScaler) -> TimeSeriesFrame:
    return frame.replace(scaler.transform(frame.data[scaler.columns]))


def prepare(cfg: RunConfig, data_path=None, frame: Optional[TimeSeriesFrame] = None) -> Prepared:
    """Runs every preprocessing step; scaler and encoder only ever see the training segment."""
    raw = load_frame(cfg, data_path) if frame is None else frame
    cleaned, report = clean(raw, cfg.cleaning.missing_row_threshold, cfg.cleaning.sigma_k)
    train, val, test = chrono_split(cleaned, cfg.split)
    encoder = None
    if cleaned.categorical:
        encoder = OneHotEncoder().fit(train.data, cleaned.categorical)
    segments = {name: encode_frame(seg, encoder) for name, seg in (("train", train), ("val", val), ("test", test))}
    scaler = MinMaxScaler(cfg.scaler_range).fit(segments["train"].data)
    hp = cfg.hyperparams
    datasets = {
        name: make_windows(scale_frame(seg, scaler), hp.window_len, hp.horizon) for name, seg in segments.items()
    }
    for name, ds in datasets.items():
        if len(ds) == 0:
            raise DataError(
                f"{name} segment has {len(segments[name])} rows, too few for window {hp.window_len} + horizon {hp.horizon}"
            )
    return Prepared(raw, cleaned, report, encoder, scaler, segments, datasets)


def model_input(frame: TimeSeriesFrame, encoder: Optional[OneHotEncoder], scaler: MinMaxScaler) -> pd.DataFrame:
    """Encoded (unscaled) feature table in the scaler's column order, for prediction."""
    encoded = encode_frame(frame, encoder)
    missing = [c for c in scaler.columns if c not in encoded.data.columns]
    extra = [c for c in encoded.data.columns if c not in scaler.columns]
    if missing or extra:
        raise SchemaError(f"data columns do not match the checkpoint: missing {missing}, unexpected {extra}")
    return encoded.data[scaler.columns]
