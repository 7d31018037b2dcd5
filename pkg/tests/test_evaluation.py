import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pricecast.errors import DataError, UndefinedMetricError
from pricecast.evaluation import (
    PredictionSet,
    compute_metrics,
    expanding_folds,
    fold_blocks,
    kfold_cv,
    mae,
    mape,
    r2,
    rmse,
)
from pricecast.model import HyperParams
from pricecast.preprocess import MinMaxScaler
from support import loop_metrics, random_prediction_set, sine_windows


def ps(y, y_hat):
    return PredictionSet(np.array(y, float), np.array(y_hat, float))


def test_mae_cases():
    assert mae(ps([1, 2, 3], [2, 2, 2])) == pytest.approx(2 / 3)
    assert mae(ps([4, 5], [4, 5])) == 0.0


@given(st.lists(st.tuples(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3)), min_size=1, max_size=30), st.randoms())
def test_mae_permutation_invariant(pairs, rnd):
    shuffled = list(pairs)
    rnd.shuffle(shuffled)
    a = mae(ps([p[0] for p in pairs], [p[1] for p in pairs]))
    b = mae(ps([p[0] for p in shuffled], [p[1] for p in shuffled]))
    assert a == pytest.approx(b, rel=1e-12, abs=1e-12)


def test_rmse_cases():
    assert rmse(ps([0, 0], [3, 4])) == pytest.approx(math.sqrt(12.5), rel=1e-15)
    assert rmse(ps([1, 2, 3], [1.5, 2.5, 3.5])) == pytest.approx(0.5)
    assert rmse(ps([7, 7], [7, 7])) == 0.0


def test_mape_cases():
    assert mape(ps([100], [90])) == (pytest.approx(10.0), 0)
    assert mape(ps([3, 4], [3, 4])) == (0.0, 0)
    assert mape(ps([0, 100], [5, 100])) == (0.0, 1)
    with pytest.raises(UndefinedMetricError):
        mape(ps([0, 1e-9], [1, 1]))


def test_r2_cases():
    assert r2(ps([1, 2, 3], [1, 2, 4])) == pytest.approx(0.5)
    assert r2(ps([1, 2, 3], [1, 2, 3])) == 1.0
    assert r2(ps([1, 2, 3], [2, 2, 2])) == 0.0
    with pytest.raises(UndefinedMetricError):
        r2(ps([5, 5, 5], [1, 2, 3]))


def test_prediction_set_validation():
    with pytest.raises(DataError):
        ps([1, 2], [1])
    with pytest.raises(DataError):
        ps([], [])


def rel(a, b):
    return abs(a - b) / max(abs(a), abs(b)) if a != b else 0.0


def test_metrics_match_loop_oracle():
    rng = np.random.default_rng(2024)
    for _ in range(200):
        y, y_hat = random_prediction_set(rng)
        oracle = loop_metrics(y, y_hat)
        m = compute_metrics(y, y_hat)
        assert rel(m.mae, oracle["mae"]) <= 1e-12
        assert rel(m.rmse, oracle["rmse"]) <= 1e-12
        assert rel(m.mape_percent, oracle["mape"]) <= 1e-12
        assert m.mape_excluded_count == oracle["excluded"]
        assert rel(m.r2, oracle["r2"]) <= 1e-12


def test_compute_metrics_per_step_and_pooled():
    y = np.array([[1.0, 2.0], [3.0, 5.0], [2.0, 1.0]])
    y_hat = np.array([[1.5, 2.0], [2.0, 5.5], [2.0, 0.0]])
    m = compute_metrics(y, y_hat)
    assert m.n == 6
    assert m.mae == pytest.approx(np.mean(np.abs(y - y_hat)))
    assert [s["step"] for s in m.per_step] == [1, 2]
    assert m.per_step[0]["mae"] == pytest.approx(0.5)
    d = m.to_dict()
    assert set(d) >= {"mae", "rmse", "mape_percent", "r2", "mape_excluded_count", "per_step"}


def test_constant_target_reports_undefined_r2():
    assert compute_metrics([2.0, 2.0], [1.0, 3.0]).r2 is None


def test_fold_blocks_partition():
    blocks = fold_blocks(100, 5)
    assert [len(b) for b in blocks] == [20] * 5
    np.testing.assert_array_equal(np.concatenate(blocks), np.arange(100))
    with pytest.raises(DataError):
        fold_blocks(3, 5)


@given(st.integers(10, 300), st.integers(2, 8), st.integers(0, 3))
def test_expanding_folds_never_leak(count, k, gap):
    if count < k * (gap + 2):
        return
    folds = expanding_folds(count, k, gap)
    assert len(folds) == k - 1
    seen = set()
    for _, tr, va in folds:
        assert tr.max() + gap < va.min()
        assert not seen & set(va.tolist())
        seen |= set(va.tolist())


def test_kfold_cv_smoke():
    import pandas as pd

    ds = sine_windows(60, 12, 3)
    sc = MinMaxScaler((-1, 1)).fit(pd.DataFrame({"y": [-1.0, 1.0], "y_lag": [-1.0, 1.0]},
                                                index=pd.date_range("2020-01-01", periods=2)))
    hp = HyperParams(window_len=12, horizon=3, conv_channels=(2, 2, 2), gru_hidden=3, gru_layers=1,
                     batch_size=8, max_epochs=2)
    report = kfold_cv(ds, hp, sc, "y", k=3)
    d = report.to_dict()
    assert d["evaluations"] == 2
    assert [f["fold"] for f in d["folds"]] == [1, 2]
    assert d["folds"][0]["train_size"] < d["folds"][1]["train_size"]
