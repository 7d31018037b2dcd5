"""Run configuration loaded from a YAML file.

Every key is optional; defaults are shown below. Unknown keys at any level
are rejected::

    data: prices.csv            # input CSV (the --data flag overrides it)
    target: target              # numeric column to forecast
    categorical: []             # string columns to one-hot encode
    seed: 0                     # run seed (the --seed flag overrides it)
    output_dir: out             # where reports and checkpoints go (--out overrides it)
    split: [0.70, 0.15, 0.15]   # chronological train/val/test fractions
    scaler_range: [-1.0, 1.0]   # min-max target interval
    cleaning:
      missing_row_threshold: 0.10
      sigma_k: 3.0
    hyperparams:                # any HyperParams field except seed
      learning_rate: 0.001
      batch_size: 64
      ...
    ssa:
      population_size: 20
      max_iterations: 10
      alpha_start: 0.9
      alpha_end: 0.4
      beta: 1.5
      gamma: 1.5
      epoch_budget: 15          # training epochs per fitness evaluation
    kfold:
      enabled: false
      k: 5
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import yaml

from .errors import ConfigError
from .model import HyperParams
from .preprocess import split_sizes
from .ssa import DEFAULT_SEARCH_SPACE, SsaConfig


@dataclass(frozen=True)
class CleaningConfig:
    missing_row_threshold: float = 0.10
    sigma_k: float = 3.0


@dataclass(frozen=True)
class SsaBlock:
    population_size: int = 20
    max_iterations: int = 10
    alpha_start: float = 0.9
    alpha_end: float = 0.4
    beta: float = 1.5
    gamma: float = 1.5
    epoch_budget: int = 15

    def to_ssa_config(self, seed: int) -> SsaConfig:
        return SsaConfig(
            bounds=[(d.lo, d.hi) for d in DEFAULT_SEARCH_SPACE],
            population_size=self.population_size,
            max_iterations=self.max_iterations,
            alpha_start=self.alpha_start,
            alpha_end=self.alpha_end,
            beta=self.beta,
            gamma=self.gamma,
            seed=seed,
        )


@dataclass(frozen=True)
class KFoldConfig:
    enabled: bool = False
    k: int = 5


@dataclass(frozen=True)
class RunConfig:
    data: Optional[str] = None
    target: str = "target"
    categorical: tuple[str, ...] = ()
    seed: int = 0
    output_dir: str = "out"
    split: tuple[float, float, float] = (0.70, 0.15, 0.15)
    scaler_range: tuple[float, float] = (-1.0, 1.0)
    cleaning: CleaningConfig = field(default_factory=CleaningConfig)
    hyperparams: HyperParams = field(default_factory=HyperParams)
    ssa: SsaBlock = field(default_factory=SsaBlock)
    kfold: KFoldConfig = field(default_factory=KFoldConfig)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not isinstance(self.target, str) or not self.target:
            raise ConfigError("target must be a non-empty column name")
        if self.target in self.categorical:
            raise ConfigError(f"target {self.target!r} cannot also be categorical")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")
        if len(self.split) != 3:
            raise ConfigError(f"split needs three fractions, got {list(self.split)}")
        try:
            split_sizes(1000, self.split)
        except Exception as exc:
            raise ConfigError(str(exc)) from None
        lo, hi = self.scaler_range
        if not lo < hi:
            raise ConfigError(f"scaler_range must satisfy lo < hi, got {list(self.scaler_range)}")
        if not 0.0 <= self.cleaning.missing_row_threshold <= 1.0:
            raise ConfigError("cleaning.missing_row_threshold must lie in [0, 1]")
        if not self.cleaning.sigma_k > 0:
            raise ConfigError("cleaning.sigma_k must be positive")
        if self.ssa.epoch_budget < 1:
            raise ConfigError("ssa.epoch_budget must be >= 1")
        if self.kfold.k < 2:
            raise ConfigError(f"kfold.k must be >= 2, got {self.kfold.k}")
        self.ssa.to_ssa_config(self.seed)
        if self.hyperparams.seed != self.seed:
            raise ConfigError("hyperparams.seed must equal the run seed")

    @property
    def ssa_config(self) -> SsaConfig:
        return self.ssa.to_ssa_config(self.seed)

    def with_overrides(self, data=None, seed=None, output_dir=None) -> "RunConfig":
        d = self.to_dict(include_paths=True)
        if data is not None:
            d["data"] = str(data)
        if output_dir is not None:
            d["output_dir"] = str(output_dir)
        if seed is not None:
            d["seed"] = seed
        return RunConfig.from_dict(d)

    def to_dict(self, include_paths: bool = False) -> dict:
        """Plain-data snapshot. Paths are left out by default so snapshots don't depend on where a run lives."""
        hp = self.hyperparams.to_dict()
        hp.pop("seed")
        d = {
            "target": self.target,
            "categorical": list(self.categorical),
            "seed": self.seed,
            "split": list(self.split),
            "scaler_range": list(self.scaler_range),
            "cleaning": _plain(self.cleaning),
            "hyperparams": hp,
            "ssa": _plain(self.ssa),
            "kfold": _plain(self.kfold),
        }
        if include_paths:
            d = {"data": self.data, "output_dir": self.output_dir, **d}
        return d

    @classmethod
    def from_dict(cls, d: Optional[dict]) -> "RunConfig":
        d = {} if d is None else d
        if not isinstance(d, dict):
            raise ConfigError("config root must be a mapping")
        _check_keys("config", d, {f.name for f in fields(cls)})
        seed = d.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool):
            raise ConfigError(f"seed must be an integer, got {seed!r}")
        hp_block = dict(d.get("hyperparams") or {})
        if "seed" in hp_block:
            raise ConfigError("set the seed at the top level, not under hyperparams")
        _check_keys("hyperparams", hp_block, set(HyperParams.__dataclass_fields__) - {"seed"})
        try:
            hp = HyperParams(**hp_block, seed=seed)
            return cls(
                data=None if d.get("data") is None else str(d["data"]),
                target=d.get("target", "target"),
                categorical=tuple(d.get("categorical") or ()),
                seed=seed,
                output_dir=str(d.get("output_dir", "out")),
                split=tuple(float(v) for v in d.get("split", (0.70, 0.15, 0.15))),
                scaler_range=tuple(float(v) for v in d.get("scaler_range", (-1.0, 1.0))),
                cleaning=_block("cleaning", CleaningConfig, d.get("cleaning")),
                hyperparams=hp,
                ssa=_block("ssa", SsaBlock, d.get("ssa")),
                kfold=_block("kfold", KFoldConfig, d.get("kfold")),
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"invalid config value: {exc}") from None


def _plain(obj) -> dict:
    return {f.name: getattr(obj, f.name) for f in fields(obj)}


def _check_keys(where: str, d: dict, allowed: set[str]):
    unknown = sorted(set(d) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")


def _block(name: str, cls, d):
    d = {} if d is None else d
    if not isinstance(d, dict):
        raise ConfigError(f"{name} must be a mapping")
    _check_keys(name, d, {f.name for f in fields(cls)})
    return cls(**d)


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})".replace("\n", " ")) from None
    return RunConfig.from_dict(doc)


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(include_paths=True), sort_keys=False)
