import numpy as np
import pandas as pd
import pytest

from pricecast.config import RunConfig, dump_config, load_config
from pricecast.errors import ConfigError
from pricecast.io import read_csv
from pricecast.pipeline import prepare
from pricecast.synth import generate, synth_generate


def test_same_seed_byte_identical(tmp_path):
    a = synth_generate("sinusoid", 200, 7, tmp_path / "a.csv")
    b = synth_generate("sinusoid", 200, 7, tmp_path / "b.csv")
    c = synth_generate("sinusoid", 200, 8, tmp_path / "c.csv")
    assert a.read_bytes() == b.read_bytes()
    assert a.read_bytes() != c.read_bytes()


@pytest.mark.parametrize("kind", ["sinusoid", "trend_season_noise", "ar1"])
def test_shape_and_dates(tmp_path, kind):
    path = synth_generate(kind, 400, 1, tmp_path / f"{kind}.csv")
    f = read_csv(path, "target")
    assert len(f) == 400
    assert list(f.data.columns) == ["f1", "f2", "f3", "target"]
    assert (np.diff(f.dates.asi8) == 86_400 * 10**9).all()
    assert f.dates[0] == pd.Timestamp("2020-01-01")


def test_features_are_lags_and_rolling_mean():
    df = generate("trend_season_noise", 60, 3)
    y = df["target"].to_numpy()
    np.testing.assert_array_equal(df["f1"].to_numpy()[1:], y[:-1])
    np.testing.assert_array_equal(df["f2"].to_numpy()[7:], y[:-7])
    np.testing.assert_allclose(df["f3"].to_numpy()[6:], np.convolve(y, np.ones(7) / 7, "valid"), rtol=1e-13)


def test_sinusoid_residual_noise():
    df = generate("sinusoid", 3000, 5)
    t = np.arange(3000)
    resid = df["target"].to_numpy() - (50 + 10 * np.sin(2 * np.pi * t / 30))
    assert abs(resid.mean()) < 0.05
    assert 0.45 < resid.std() < 0.55


def test_ar1_lag_one_autocorrelation():
    x = generate("ar1", 2000, 11)["target"].to_numpy()
    x = x - x.mean()
    rho = np.dot(x[1:], x[:-1]) / np.dot(x, x)
    assert 0.8 <= rho <= 0.95


def test_rows_too_small_and_unknown_kind():
    with pytest.raises(ConfigError):
        generate("sinusoid", 46, 0)
    with pytest.raises(ConfigError):
        generate("walk", 100, 0)


# -- config -----------------------------------------------------------------

def test_defaults_and_roundtrip(tmp_path):
    cfg = RunConfig()
    assert cfg.scaler_range == (-1.0, 1.0)
    assert cfg.hyperparams.learning_rate == 0.001 and cfg.hyperparams.max_epochs == 100
    p = tmp_path / "c.yml"
    p.write_text(dump_config(cfg))
    assert load_config(p) == cfg


def test_yaml_overrides(tmp_path):
    p = tmp_path / "c.yml"
    p.write_text("seed: 9\nhyperparams:\n  gru_hidden: 8\n  conv_channels: [4, 8, 16]\nssa:\n  population_size: 6\n")
    cfg = load_config(p)
    assert cfg.hyperparams.gru_hidden == 8 and cfg.hyperparams.conv_channels == (4, 8, 16)
    assert cfg.hyperparams.seed == 9 and cfg.ssa_config.seed == 9
    assert cfg.ssa_config.population_size == 6
    assert cfg.with_overrides(seed=3).hyperparams.seed == 3


@pytest.mark.parametrize("text,pattern", [
    ("bogus: 1\n", "unknown key"),
    ("hyperparams:\n  dropout: 0.2\n", "unknown key"),
    ("ssa:\n  swarm: 3\n", "unknown key"),
    ("hyperparams:\n  seed: 3\n", "top level"),
    ("split: [0.5, 0.5]\n", "three"),
    ("scaler_range: [1, 0]\n", "lo < hi"),
    ("hyperparams:\n  patience: 0\n", "patience"),
    ("seed: -1\n", "seed"),
    ("- a\n- b\n", "mapping"),
    ("a: [\n", "YAML"),
])
def test_config_errors(tmp_path, text, pattern):
    p = tmp_path / "c.yml"
    p.write_text(text)
    with pytest.raises(ConfigError, match=pattern):
        load_config(p)


def test_snapshot_omits_paths():
    cfg = RunConfig(data="/some/where.csv", output_dir="/tmp/x")
    assert "data" not in cfg.to_dict() and "output_dir" not in cfg.to_dict()


def test_prepare_fits_on_train_only(tmp_path):
    path = synth_generate("trend_season_noise", 300, 2, tmp_path / "t.csv")
    prep = prepare(RunConfig(data=str(path)))
    train_max = prep.segments["train"].data["target"].max()
    assert prep.scaler.data_max["target"] == train_max
    # Rising trend: test data exceeds the train range and maps above 1.
    assert prep.datasets["test"].targets.max() > 1.0
    assert {k: len(v) for k, v in prep.segments.items()} == {"train": 210, "val": 45, "test": 45}
    assert len(prep.datasets["val"]) == 45 - 36
