"""Seeded synthetic price series for demos and end-to-end tests.

Every generator emits a daily ``date`` column starting 2020-01-01, three
derived feature columns and a ``target`` column:

    f1 = target lagged one day
    f2 = target lagged seven days
    f3 = trailing 7-day mean of target

Leading lag cells (no history yet) take the first available lagged value.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pandas as pd

from .errors import ConfigError
from .io import write_frame_csv
from .numeric import RngStream

KINDS = ("sinusoid", "trend_season_noise", "ar1")
START_DATE = "2020-01-01"
AR1_COEF = 0.9
AR1_LEVEL = 100.0


def _sinusoid(t: np.ndarray, rng: RngStream) -> np.ndarray:
    return 50.0 + 10.0 * np.sin(2.0 * np.pi * t / 30.0) + rng.normal(0.0, 0.5, t.size)


def _trend_season_noise(t: np.ndarray, rng: RngStream) -> np.ndarray:
    weekly = np.array([0.0, 1.5, 2.5, 1.0, -0.5, -2.0, -2.5])
    return 40.0 + 0.05 * t + weekly[t % 7] + rng.normal(0.0, 0.5, t.size)


def _ar1(t: np.ndarray, rng: RngStream) -> np.ndarray:
    eps = rng.normal(0.0, 1.0, t.size)
    x = np.empty(t.size)
    # Start from the stationary distribution so there is no burn-in transient.
    x[0] = eps[0] / np.sqrt(1.0 - AR1_COEF**2)
    for i in range(1, t.size):
        x[i] = AR1_COEF * x[i - 1] + eps[i]
    # The level offset keeps values far from zero so percentage errors stay defined.
    return AR1_LEVEL + x


_GENERATORS = {"sinusoid": _sinusoid, "trend_season_noise": _trend_season_noise, "ar1": _ar1}


def generate(kind: str, rows: int, seed: int, min_rows: int = 47) -> pd.DataFrame:
    """Builds a synthetic frame indexed by date.

    Args:
        kind: One of ``sinusoid``, ``trend_season_noise``, ``ar1``.
        rows: Number of daily rows.
        seed: Stream seed; equal seeds give identical frames.
        min_rows: Smallest accepted ``rows`` (window + horizon + 10 by default).
    """
    if kind not in _GENERATORS:
        raise ConfigError(f"unknown synthetic kind {kind!r}; choose from {', '.join(KINDS)}")
    if rows < min_rows:
        raise ConfigError(f"synthetic series needs at least {min_rows} rows, got {rows}")
    t = np.arange(rows)
    y = _GENERATORS[kind](t, RngStream(seed).child(f"synth.{kind}"))
    s = pd.Series(y)
    df = pd.DataFrame({
        "f1": s.shift(1).bfill(),
        "f2": s.shift(7).bfill(),
        "f3": s.rolling(7, min_periods=1).mean(),
        "target": y,
    })
    df.index = pd.date_range(START_DATE, periods=rows, freq="D", name="date")
    return df


def synth_generate(kind: str, rows: int, seed: int, out_path, min_rows: int = 47) -> Path:
    """Writes :func:`generate` output as CSV and returns the path."""
    out_path = Path(out_path)
    write_frame_csv(generate(kind, rows, seed, min_rows), out_path)
    return out_path
