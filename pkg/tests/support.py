"""Shared test helpers: finite-difference gradient checking and tiny datasets."""

from __future__ import annotations

import math

import numpy as np

from pricecast.model import HyperParams, ModelState, backward, build_model, forward, mse_loss
from pricecast.preprocess import WindowedDataset

FD_STEP = 1e-5
REL_TOL = 1e-4
# Relative error is measured against max(|analytic|, |numeric|, GRAD_FLOOR) so
# gradients that are zero up to round-off don't produce 0/0.
GRAD_FLOOR = 1e-8

TINY_HP = dict(window_len=10, horizon=2, conv_channels=(2, 2, 2), gru_hidden=3, gru_layers=1, kernel_len=3)


def rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), GRAD_FLOOR)


def _pattern(cache) -> tuple:
    """Every piecewise choice the forward pass made: ReLU signs and pooling winners."""
    relu = tuple((z > 0).tobytes() for z in cache.relu)
    pool = tuple(p.argmax.tobytes() for p in cache.pool)
    return relu, pool


def _near_kink(cache, margin: float) -> bool:
    for z in cache.relu:
        if np.any(np.abs(z) < margin):
            return True
    return False


def model_gradcheck(model: ModelState, x: np.ndarray, y: np.ndarray, h: float = FD_STEP):
    """Central differences on every parameter coordinate of the full forecaster.

    A coordinate is skipped when either probe changes a ReLU sign or a pooling
    winner (the probe crossed a kink or tie) or lands within 1e-6 of a ReLU kink.

    Returns:
        ``(worst_rel_err, checked, skipped, failures)`` where ``failures`` lists
        ``(name, index, analytic, numeric)`` beyond :data:`REL_TOL`.
    """
    pred, cache = forward(model, x)
    _, g = mse_loss(pred, y)
    grads = backward(model, cache, g)
    base = _pattern(cache)
    worst, checked, skipped, failures = 0.0, 0, 0, []
    for name, p in model.params.items():
        for i in range(p.size):
            old = p.flat[i]
            p.flat[i] = old + h
            pp, cp = forward(model, x)
            p.flat[i] = old - h
            pm, cm = forward(model, x)
            p.flat[i] = old
            if _pattern(cp) != base or _pattern(cm) != base or _near_kink(cp, 1e-6) or _near_kink(cm, 1e-6):
                skipped += 1
                continue
            num = (mse_loss(pp, y)[0] - mse_loss(pm, y)[0]) / (2 * h)
            an = float(grads[name].flat[i])
            err = rel_err(an, num)
            worst = max(worst, err)
            checked += 1
            if err > REL_TOL:
                failures.append((name, i, an, num))
    return worst, checked, skipped, failures


def tiny_gradcheck(seed: int):
    hp = HyperParams(seed=seed, **TINY_HP)
    model = build_model(hp, 2)
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(3, hp.window_len, 2))
    y = rng.normal(size=(3, hp.horizon))
    return model_gradcheck(model, x, y)


def sine_windows(count: int = 32, window_len: int = 30, horizon: int = 7) -> WindowedDataset:
    """``count`` overlapping windows of a two-feature scaled sine wave."""
    n = count + window_len + horizon - 1
    t = np.arange(n)
    y = 0.9 * np.sin(2 * np.pi * t / 30)
    X = np.stack([y, np.roll(y, 1)], axis=1)
    starts = np.arange(count)[:, None]
    return WindowedDataset(X[starts + np.arange(window_len)], y[starts + window_len + np.arange(horizon)],
                           window_len, horizon, ("y", "y_lag"))


def loop_metrics(y, y_hat) -> dict:
    """Plain-Python metric oracle: element loops with exactly rounded sums (math.fsum)."""
    y = [float(v) for v in np.ravel(y)]
    y_hat = [float(v) for v in np.ravel(y_hat)]
    n = len(y)
    abs_err = [abs(a - b) for a, b in zip(y, y_hat)]
    sq_err = [(a - b) * (a - b) for a, b in zip(y, y_hat)]
    kept = [abs(a - b) / abs(a) for a, b in zip(y, y_hat) if abs(a) >= 1e-8]
    mean_y = math.fsum(y) / n
    sst = math.fsum((a - mean_y) * (a - mean_y) for a in y)
    return {
        "mae": math.fsum(abs_err) / n,
        "rmse": math.sqrt(math.fsum(sq_err) / n),
        "mape": 100.0 * math.fsum(kept) / len(kept) if kept else None,
        "excluded": n - len(kept),
        "r2": 1.0 - math.fsum(sq_err) / sst if sst >= 1e-12 else None,
    }


def random_prediction_set(rng: np.random.Generator):
    """Prediction sets of varied size, scale and quality, sometimes with exact zeros in y."""
    n = int(rng.integers(2, 10_001))
    scale = 10.0 ** rng.uniform(-3, 4)
    y = rng.normal(loc=rng.uniform(-2, 5) * scale, scale=scale, size=n)
    if rng.random() < 0.2:
        y[rng.random(n) < 0.05] = 0.0
    y_hat = y + rng.normal(scale=scale * rng.uniform(0.01, 2.0), size=n)
    return y, y_hat
