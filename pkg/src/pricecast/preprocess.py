"""Cleaning, scaling, encoding, chronological splitting and windowing.

Order of operations used by the pipeline: clean the full frame, split it
chronologically, fit the encoder and scaler on the training segment only,
then cut sliding windows inside each segment separately.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
import pandas as pd

from .errors import DataError, EmptyDataError, SchemaError, SplitError

log = logging.getLogger(__name__)


@dataclass
class TimeSeriesFrame:
    """Date-indexed table with one numeric target and optional categorical columns."""

    data: pd.DataFrame
    target: str
    categorical: tuple[str, ...] = ()

    def __post_init__(self):
        self.categorical = tuple(self.categorical)
        idx = self.data.index
        if not isinstance(idx, pd.DatetimeIndex):
            raise SchemaError("frame index must be a DatetimeIndex of calendar dates")
        if len(idx) > 1 and not (np.diff(idx.asi8) > 0).all():
            raise DataError("frame dates must be strictly increasing")
        if self.target not in self.data.columns:
            raise SchemaError(f"target column {self.target!r} not found; columns are {list(self.data.columns)}")
        if self.target in self.categorical:
            raise SchemaError(f"target column {self.target!r} cannot be categorical")
        for c in self.categorical:
            if c not in self.data.columns:
                raise SchemaError(f"declared categorical column {c!r} not found")
        for c in self.numeric_columns:
            if not pd.api.types.is_numeric_dtype(self.data[c]):
                raise SchemaError(f"column {c!r} is not numeric")

    @property
    def numeric_columns(self) -> list[str]:
        return [c for c in self.data.columns if c not in self.categorical]

    @property
    def dates(self) -> pd.DatetimeIndex:
        return self.data.index

    def __len__(self) -> int:
        return len(self.data)

    def replace(self, data: pd.DataFrame, categorical: Optional[Sequence[str]] = None) -> "TimeSeriesFrame":
        return TimeSeriesFrame(data, self.target, self.categorical if categorical is None else tuple(categorical))

    def tail(self, n: int) -> "TimeSeriesFrame":
        return self.replace(self.data.iloc[-n:])


# -- cleaning ---------------------------------------------------------------

@dataclass
class OutlierFix:
    column: str
    date: str
    original: float
    replacement: float


@dataclass
class CleaningReport:
    rows_in: int
    dropped_dates: list[str] = field(default_factory=list)
    filled_cells: dict[str, int] = field(default_factory=dict)
    outliers: list[OutlierFix] = field(default_factory=list)

    @property
    def rows_out(self) -> int:
        return self.rows_in - len(self.dropped_dates)

    def to_dict(self) -> dict:
        return {
            "rows_in": self.rows_in,
            "rows_out": self.rows_out,
            "dropped_rows": len(self.dropped_dates),
            "dropped_dates": list(self.dropped_dates),
            "filled_cells": dict(sorted(self.filled_cells.items())),
            "corrected_outliers": len(self.outliers),
            "outliers": [vars(o) for o in self.outliers],
        }

    def summary(self) -> str:
        filled = sum(self.filled_cells.values())
        return (
            f"rows in: {self.rows_in}, rows kept: {self.rows_out}, dropped: {len(self.dropped_dates)}, "
            f"cells filled: {filled}, outliers corrected: {len(self.outliers)}"
        )


def outlier_mask(values: np.ndarray, sigma_k: float = 3.0) -> np.ndarray:
    """True where ``|v - mean| > sigma_k * std`` (population std); nothing flagged when std is 0."""
    values = np.asarray(values, dtype=float)
    std = values.std()
    if std == 0.0 or np.ptp(values) == 0.0:
        return np.zeros(values.shape, dtype=bool)
    return np.abs(values - values.mean()) > sigma_k * std


def clean(frame: TimeSeriesFrame, missing_row_threshold: float = 0.10, sigma_k: float = 3.0):
    """Drop sparse rows, fill remaining gaps, and correct 3-sigma outliers.

    Rows whose fraction of missing cells exceeds ``missing_row_threshold`` are
    dropped. Remaining gaps are forward-filled (leading gaps back-filled).
    Each numeric column is then tested once against mean +/- ``sigma_k``
    std, and flagged values are replaced by the nearest preceding non-outlier
    (the nearest following one when no earlier value exists).

    Returns:
        ``(cleaned_frame, CleaningReport)``
    """
    df = frame.data
    if len(df) == 0:
        raise EmptyDataError("cannot clean an empty frame")
    report = CleaningReport(rows_in=len(df))

    missing_frac = df.isna().sum(axis=1).to_numpy() / df.shape[1]
    drop = missing_frac > missing_row_threshold
    report.dropped_dates = [d.strftime("%Y-%m-%d") for d in df.index[drop]]
    df = df.loc[~drop].copy()
    if len(df) == 0:
        raise EmptyDataError(
            f"all {report.rows_in} rows exceed the missing-value threshold of {missing_row_threshold:.0%}"
        )

    for col in df.columns:
        n_missing = int(df[col].isna().sum())
        if n_missing == 0:
            continue
        if n_missing == len(df):
            raise EmptyDataError(f"column {col!r} has no values left to fill from")
        df[col] = df[col].ffill().bfill()
        report.filled_cells[col] = n_missing

    for col in frame.numeric_columns:
        values = df[col].to_numpy(dtype=float)
        mask = outlier_mask(values, sigma_k)
        if not mask.any():
            continue
        fixed = pd.Series(np.where(mask, np.nan, values), index=df.index).ffill().bfill()
        for i in np.flatnonzero(mask):
            report.outliers.append(
                OutlierFix(col, df.index[i].strftime("%Y-%m-%d"), float(values[i]), float(fixed.iloc[i]))
            )
        df[col] = fixed.to_numpy()
    return frame.replace(df), report


# -- min-max scaling --------------------------------------------------------

class MinMaxScaler:
    """Per-column affine map of the fitted ``[min, max]`` onto ``feature_range``.

    Columns with ``max == min`` are degenerate: they transform to ``lo`` and
    invert to the stored min.
    """

    def __init__(self, feature_range: tuple[float, float] = (0.0, 1.0)):
        lo, hi = feature_range
        if not lo < hi:
            raise DataError(f"feature_range must satisfy lo < hi, got {feature_range}")
        self.feature_range = (float(lo), float(hi))
        self.data_min: dict[str, float] = {}
        self.data_max: dict[str, float] = {}

    @property
    def columns(self) -> list[str]:
        return list(self.data_min)

    @property
    def degenerate(self) -> list[str]:
        return [c for c in self.data_min if self.data_max[c] == self.data_min[c]]

    def fit(self, df: pd.DataFrame, columns: Optional[Iterable[str]] = None) -> "MinMaxScaler":
        columns = list(df.columns if columns is None else columns)
        for c in columns:
            col = df[c].to_numpy(dtype=float)
            if col.size == 0:
                raise EmptyDataError(f"cannot fit scaler on empty column {c!r}")
            self.data_min[c] = float(col.min())
            self.data_max[c] = float(col.max())
        return self

    def _check(self, df: pd.DataFrame):
        if not self.data_min:
            raise SchemaError("scaler has not been fitted")
        unknown = [c for c in df.columns if c not in self.data_min]
        missing = [c for c in self.data_min if c not in df.columns]
        if unknown or missing:
            raise SchemaError(f"scaler schema mismatch: unknown columns {unknown}, missing columns {missing}")

    def transform_column(self, name: str, values) -> np.ndarray:
        lo, hi = self.feature_range
        mn, mx = self.data_min[name], self.data_max[name]
        values = np.asarray(values, dtype=float)
        if mx == mn:
            return np.full_like(values, lo)
        return lo + (values - mn) * (hi - lo) / (mx - mn)

    def inverse_column(self, name: str, values) -> np.ndarray:
        if name not in self.data_min:
            raise SchemaError(f"scaler has no column {name!r}")
        lo, hi = self.feature_range
        mn, mx = self.data_min[name], self.data_max[name]
        values = np.asarray(values, dtype=float)
        if mx == mn:
            return np.full_like(values, mn)
        return mn + (values - lo) * (mx - mn) / (hi - lo)

    def transform(self, df: pd.DataFrame) -> pd.DataFrame:
        self._check(df)
        return pd.DataFrame({c: self.transform_column(c, df[c]) for c in df.columns}, index=df.index)

    def inverse_transform(self, df: pd.DataFrame) -> pd.DataFrame:
        self._check(df)
        return pd.DataFrame({c: self.inverse_column(c, df[c]) for c in df.columns}, index=df.index)

    def to_dict(self) -> dict:
        return {
            "feature_range": list(self.feature_range),
            "columns": [{"name": c, "min": self.data_min[c], "max": self.data_max[c]} for c in self.data_min],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MinMaxScaler":
        s = cls(tuple(d["feature_range"]))
        for col in d["columns"]:
            s.data_min[col["name"]] = float(col["min"])
            s.data_max[col["name"]] = float(col["max"])
        return s


def scaler_fit(df: pd.DataFrame, feature_range: tuple[float, float] = (0.0, 1.0)) -> MinMaxScaler:
    return MinMaxScaler(feature_range).fit(df)


def scaler_transform(scaler: MinMaxScaler, df: pd.DataFrame) -> pd.DataFrame:
    return scaler.transform(df)


def scaler_inverse(scaler: MinMaxScaler, df: pd.DataFrame) -> pd.DataFrame:
    return scaler.inverse_transform(df)


# -- one-hot encoding -------------------------------------------------------

class OneHotEncoder:
    """Indicator columns ``column=category`` with a lexicographically sorted vocabulary.

    Categories not seen at fit time encode to all zeros and bump
    ``unknown_count``.
    """

    def __init__(self):
        self.vocab: dict[str, list[str]] = {}
        self.unknown_count = 0

    def fit(self, df: pd.DataFrame, columns: Sequence[str]) -> "OneHotEncoder":
        for c in columns:
            if c not in df.columns:
                raise SchemaError(f"categorical column {c!r} not found")
            cats = sorted({str(v) for v in df[c].dropna()})
            if not cats:
                raise DataError(f"categorical column {c!r} has an empty vocabulary")
            self.vocab[c] = cats
        return self

    def output_columns(self, column: str) -> list[str]:
        return [f"{column}={cat}" for cat in self.vocab[column]]

    def transform(self, df: pd.DataFrame) -> pd.DataFrame:
        parts = {}
        for c in df.columns:
            if c not in self.vocab:
                parts[c] = df[c]
                continue
            values = df[c].astype(object).map(lambda v: None if pd.isna(v) else str(v)).to_numpy()
            known = set(self.vocab[c])
            unknown = sum(1 for v in values if v not in known)
            if unknown:
                log.warning("column %r: %d value(s) outside the fitted vocabulary encoded as zeros", c, unknown)
                self.unknown_count += unknown
            for cat, name in zip(self.vocab[c], self.output_columns(c)):
                parts[name] = (values == cat).astype(float)
        missing = [c for c in self.vocab if c not in df.columns]
        if missing:
            raise SchemaError(f"encoder columns missing from frame: {missing}")
        return pd.DataFrame(parts, index=df.index)

    def to_dict(self) -> dict:
        return {"columns": [{"name": c, "categories": list(v)} for c, v in self.vocab.items()]}

    @classmethod
    def from_dict(cls, d: dict) -> "OneHotEncoder":
        enc = cls()
        for col in d["columns"]:
            enc.vocab[col["name"]] = list(col["categories"])
        return enc


def one_hot_fit_transform(frame: TimeSeriesFrame, columns: Sequence[str]):
    enc = OneHotEncoder().fit(frame.data, columns)
    return enc, frame.replace(enc.transform(frame.data), categorical=())


# -- splitting --------------------------------------------------------------

def split_sizes(n: int, ratios: Sequence[float] = (0.70, 0.15, 0.15)) -> tuple[int, int, int]:
    if len(ratios) != 3 or min(ratios) <= 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise SplitError(f"split ratios must be three positive fractions summing to 1, got {tuple(ratios)}")
    # The epsilon keeps e.g. 0.7 * 100 = 69.99999... from flooring to 69.
    n_train = math.floor(ratios[0] * n + 1e-9)
    n_val = math.floor(ratios[1] * n + 1e-9)
    n_test = n - n_train - n_val
    if min(n_train, n_val, n_test) <= 0:
        raise SplitError(f"{n} rows cannot be split {tuple(ratios)} without an empty segment")
    return n_train, n_val, n_test


def chrono_split(frame: TimeSeriesFrame, ratios: Sequence[float] = (0.70, 0.15, 0.15)):
    """Contiguous train/val/test segments in date order; floors for train and val, remainder to test."""
    n_train, n_val, _ = split_sizes(len(frame), ratios)
    df = frame.data
    return (
        frame.replace(df.iloc[:n_train]),
        frame.replace(df.iloc[n_train:n_train + n_val]),
        frame.replace(df.iloc[n_train + n_val:]),
    )


# -- sliding windows --------------------------------------------------------

@dataclass
class WindowedDataset:
    inputs: np.ndarray  # (count, window_len, features)
    targets: np.ndarray  # (count, horizon)
    window_len: int = 30
    horizon: int = 7
    feature_columns: tuple[str, ...] = ()
    target_dates: np.ndarray = field(default_factory=lambda: np.empty((0, 0), dtype="datetime64[D]"))

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.inputs.shape[2]

    def subset(self, idx) -> "WindowedDataset":
        idx = np.asarray(idx)
        dates = self.target_dates[idx] if self.target_dates.size else self.target_dates
        return WindowedDataset(
            self.inputs[idx], self.targets[idx], self.window_len, self.horizon, self.feature_columns, dates
        )


def window_count(series_len: int, window_len: int = 30, horizon: int = 7) -> int:
    return max(series_len - window_len - horizon + 1, 0)


def make_windows(frame: TimeSeriesFrame, window_len: int = 30, horizon: int = 7) -> WindowedDataset:
    """Window ``i`` reads rows ``[i, i+window_len)``; its target is the next ``horizon`` target values.

    All numeric columns (the target included) are input features. Call once
    per split segment so no window straddles a split boundary.
    """
    if window_len < 1 or horizon < 1:
        raise DataError(f"window_len and horizon must be >= 1, got {window_len}, {horizon}")
    if frame.categorical:
        raise SchemaError("encode categorical columns before windowing")
    columns = frame.numeric_columns
    values = frame.data[columns].to_numpy(dtype=float)
    target = frame.data[frame.target].to_numpy(dtype=float)
    dates = frame.dates.to_numpy().astype("datetime64[D]")
    count = window_count(len(frame), window_len, horizon)
    if count == 0:
        log.warning("segment of %d rows is shorter than window %d + horizon %d; no windows", len(frame), window_len, horizon)
        return WindowedDataset(
            np.empty((0, window_len, len(columns))), np.empty((0, horizon)), window_len, horizon,
            tuple(columns), np.empty((0, horizon), dtype="datetime64[D]"),
        )
    starts = np.arange(count)
    win_idx = starts[:, None] + np.arange(window_len)
    tgt_idx = starts[:, None] + window_len + np.arange(horizon)
    return WindowedDataset(values[win_idx], target[tgt_idx], window_len, horizon, tuple(columns), dates[tgt_idx])
