"""CSV ingestion and atomic file writes."""

from __future__ import annotations

import csv
import datetime as dt
import logging
import math
import os
import tempfile
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .errors import DataError, SchemaError
from .preprocess import TimeSeriesFrame

log = logging.getLogger(__name__)

MISSING = {"", "NA"}


def read_csv(path, target: str, categorical: Sequence[str] = ()) -> TimeSeriesFrame:
    """Reads a ``date``-indexed CSV into a frame sorted by date.

    Cells that are empty or ``NA`` are missing. Undeclared columns must be
    numeric. Errors carry the 1-based file line number.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"data file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise DataError(f"{path}: missing header row")
        header = [h.strip() for h in header]
        if "date" not in header:
            raise SchemaError(f"{path}: no 'date' column in header {header}")
        if target not in header:
            raise SchemaError(f"{path}: target column {target!r} not in header {header}")
        for c in categorical:
            if c not in header:
                raise SchemaError(f"{path}: categorical column {c!r} not in header {header}")
        if len(set(header)) != len(header):
            raise SchemaError(f"{path}: duplicate column names in header")
        date_pos = header.index("date")
        columns = [h for h in header if h != "date"]
        dates: list[dt.date] = []
        seen: dict[dt.date, int] = {}
        cells: dict[str, list] = {c: [] for c in columns}
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{line}: expected {len(header)} fields, found {len(row)}")
            raw_date = row[date_pos].strip()
            try:
                day = dt.date.fromisoformat(raw_date)
            except ValueError:
                raise DataError(f"{path}:{line}: unparseable date {raw_date!r} (want YYYY-MM-DD)") from None
            if day in seen:
                raise DataError(f"{path}:{line}: duplicate date {day.isoformat()} (first seen on line {seen[day]})")
            seen[day] = line
            dates.append(day)
            for name, value in zip(header, row):
                if name == "date":
                    continue
                value = value.strip()
                if value in MISSING:
                    cells[name].append(None if name in categorical else math.nan)
                elif name in categorical:
                    cells[name].append(value)
                else:
                    try:
                        cells[name].append(float(value))
                    except ValueError:
                        raise DataError(f"{path}:{line}: column {name!r} value {value!r} is not numeric") from None
    if not dates:
        raise DataError(f"{path}: no data rows")
    data = {c: (pd.Series(v, dtype=object) if c in categorical else np.asarray(v, dtype=float)) for c, v in cells.items()}
    df = pd.DataFrame(data)
    df.index = pd.DatetimeIndex(pd.to_datetime([d.isoformat() for d in dates]), name="date")
    if not df.index.is_monotonic_increasing:
        log.warning("%s: rows are not in date order; sorting", path)
        df = df.sort_index(kind="stable")
    return TimeSeriesFrame(df, target, tuple(categorical))


def write_frame_csv(frame_or_df, path) -> None:
    df = frame_or_df.data if isinstance(frame_or_df, TimeSeriesFrame) else frame_or_df
    out = df.copy()
    out.index = out.index.strftime("%Y-%m-%d")
    out.index.name = "date"
    atomic_write_text(path, out.to_csv(float_format="%.17g", na_rep="NA", lineterminator="\n"))


def atomic_write_text(path, text: str) -> None:
    """Write-temp-then-rename so readers never see a partial file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
