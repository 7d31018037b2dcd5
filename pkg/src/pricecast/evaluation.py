"""Forecast accuracy metrics and chronological K-fold cross-validation.

All metrics take actual and predicted values in original units. Arrays of
shape ``(n_windows, horizon)`` are pooled over every (window, step) pair;
:func:`compute_metrics` additionally reports each horizon step separately.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import DataError, UndefinedMetricError
from .model import HyperParams, build_model, predict_scaled, train
from .preprocess import MinMaxScaler, WindowedDataset

log = logging.getLogger(__name__)

MAPE_EPS = 1e-8
SST_EPS = 1e-12


@dataclass
class PredictionSet:
    y: np.ndarray
    y_hat: np.ndarray

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float).ravel()
        self.y_hat = np.asarray(self.y_hat, dtype=float).ravel()
        if self.y.shape != self.y_hat.shape:
            raise DataError(f"actual ({self.y.size}) and predicted ({self.y_hat.size}) lengths differ")
        if self.y.size == 0:
            raise DataError("a prediction set needs at least one sample")

    @property
    def n(self) -> int:
        return self.y.size


def mae(ps: PredictionSet) -> float:
    return float(np.mean(np.abs(ps.y - ps.y_hat)))


def rmse(ps: PredictionSet) -> float:
    return float(np.sqrt(np.mean((ps.y - ps.y_hat) ** 2)))


def mape(ps: PredictionSet) -> tuple[float, int]:
    """Mean absolute percentage error over samples with ``|y| >= 1e-8``.

    Returns:
        ``(percent, excluded)`` where ``excluded`` counts the skipped near-zero targets.
    """
    keep = np.abs(ps.y) >= MAPE_EPS
    if not keep.any():
        raise UndefinedMetricError("MAPE is undefined: every actual value is (near) zero")
    pct = np.mean(np.abs((ps.y[keep] - ps.y_hat[keep]) / ps.y[keep])) * 100.0
    return float(pct), int(ps.n - keep.sum())


def r2(ps: PredictionSet) -> float:
    sst = float(np.sum((ps.y - ps.y.mean()) ** 2))
    if sst < SST_EPS:
        raise UndefinedMetricError("R^2 is undefined for a constant target")
    sse = float(np.sum((ps.y - ps.y_hat) ** 2))
    return 1.0 - sse / sst


@dataclass
class MetricsReport:
    mae: float
    rmse: float
    mape_percent: float
    r2: Optional[float]
    mape_excluded_count: int
    n: int
    per_step: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "mae": self.mae,
            "rmse": self.rmse,
            "mape_percent": self.mape_percent,
            "mape_excluded_count": self.mape_excluded_count,
            "r2": self.r2,
            "per_step": self.per_step,
        }


def _pooled(y, y_hat) -> dict:
    ps = PredictionSet(y, y_hat)
    pct, excluded = mape(ps)
    try:
        r2_value = r2(ps)
    except UndefinedMetricError:
        r2_value = None
    return {"n": ps.n, "mae": mae(ps), "rmse": rmse(ps), "mape_percent": pct,
            "mape_excluded_count": excluded, "r2": r2_value}


def compute_metrics(y, y_hat) -> MetricsReport:
    """Pooled metrics plus a per-horizon-step breakdown when inputs are 2-D."""
    y = np.asarray(y, dtype=float)
    y_hat = np.asarray(y_hat, dtype=float)
    pooled = _pooled(y, y_hat)
    per_step = []
    if y.ndim == 2:
        for j in range(y.shape[1]):
            per_step.append({"step": j + 1, **_pooled(y[:, j], y_hat[:, j])})
    return MetricsReport(per_step=per_step, **pooled)


# -- cross-validation -------------------------------------------------------

def fold_blocks(count: int, k: int) -> list[np.ndarray]:
    """Contiguous, mutually exclusive index blocks covering ``range(count)``."""
    if k < 2:
        raise DataError(f"K-fold needs K >= 2, got {k}")
    if count < k:
        raise DataError(f"{count} windows are too few for {k} folds")
    return np.array_split(np.arange(count), k)


@dataclass
class FoldResult:
    fold: int
    train_size: int
    val_size: int
    metrics: MetricsReport


@dataclass
class CvReport:
    k: int
    folds: list[FoldResult]
    summary: dict
    scheme: str = "expanding-window: fold k trains on blocks 0..k-1 and validates on block k (K-1 evaluations)"

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "scheme": self.scheme,
            "evaluations": len(self.folds),
            "folds": [
                {"fold": f.fold, "train_size": f.train_size, "val_size": f.val_size, **f.metrics.to_dict()}
                for f in self.folds
            ],
            "summary": self.summary,
        }


def expanding_folds(count: int, k: int, gap: int = 0) -> list[tuple[int, np.ndarray, np.ndarray]]:
    """``(fold, train_idx, val_idx)`` for folds 1..K-1.

    ``gap`` drops that many training windows right before each validation block,
    so overlapping target horizons never reach back into training.
    """
    blocks = fold_blocks(count, k)
    folds = []
    for i in range(1, k):
        val_idx = blocks[i]
        train_idx = np.arange(0, max(val_idx[0] - gap, 0))
        if train_idx.size == 0:
            raise DataError(f"fold {i} has no training windows left after a gap of {gap}")
        folds.append((i, train_idx, val_idx))
    return folds


def kfold_cv(ds: WindowedDataset, hp: HyperParams, scaler: MinMaxScaler, target: str, k: int = 5,
             monitor_fraction: float = 0.15) -> CvReport:
    """Expanding-window chronological cross-validation.

    Each fold trains a fresh model on all earlier blocks. The last
    ``monitor_fraction`` of those training windows is held out for early
    stopping so the validation block is only ever used for scoring.
    """
    gap = ds.horizon - 1
    results = []
    for fold, train_idx, val_idx in expanding_folds(len(ds), k, gap):
        n_mon = max(1, int(round(monitor_fraction * train_idx.size)))
        fit_idx = train_idx[: max(train_idx.size - n_mon - gap, 0)]
        mon_idx = train_idx[-n_mon:]
        if fit_idx.size == 0:
            fit_idx, mon_idx = train_idx, train_idx
        fold_hp = replace(hp, seed=(hp.seed + fold) % 2**64)
        model = build_model(fold_hp, ds.feature_dim)
        best, _ = train(model, ds.subset(fit_idx), ds.subset(mon_idx), fold_hp)
        val = ds.subset(val_idx)
        pred = scaler.inverse_column(target, predict_scaled(best, val.inputs))
        actual = scaler.inverse_column(target, val.targets)
        results.append(FoldResult(fold, int(train_idx.size), int(val_idx.size), compute_metrics(actual, pred)))
        log.info("fold %d: rmse %.4g", fold, results[-1].metrics.rmse)
    summary = {}
    for name in ("mae", "rmse", "mape_percent", "r2"):
        vals = [getattr(r.metrics, name) for r in results if getattr(r.metrics, name) is not None]
        summary[name] = {"mean": float(np.mean(vals)) if vals else None,
                         "std": float(np.std(vals)) if vals else None}
    return CvReport(k, results, summary)
