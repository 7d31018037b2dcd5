"""``forecast`` command-line interface.

Subcommands: ``synth``, ``preprocess``, ``train``, ``tune``, ``evaluate`` and
``predict``. Every failure prints one ``error[CODE]: detail`` line on stderr
and exits 1 (usage/config), 2 (data/schema/checkpoint) or 3 (numeric).
Reports are deterministic for a fixed seed: they hold no timestamps, timings
or file paths.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from . import __version__
from .checkpoint import Checkpoint, load as load_checkpoint, save as save_checkpoint
from .config import RunConfig, load_config
from .errors import ConfigError, ForecastError, SchemaError
from .evaluation import compute_metrics, kfold_cv
from .io import atomic_write_text, read_csv, write_frame_csv
from .model import HyperParams, build_model, predict, predict_scaled, train
from .pipeline import Prepared, encode_frame, make_windows, model_input, prepare, scale_frame
from .preprocess import TimeSeriesFrame, chrono_split, clean
from .ssa import tune_hyperparams
from .synth import KINDS, synth_generate

log = logging.getLogger("pricecast")

SUBCOMMANDS = ("preprocess", "train", "tune", "evaluate", "predict", "synth")


class UsageError(ConfigError):
    code = "E_USAGE"


class _Parser(argparse.ArgumentParser):
    """Argument parser whose usage errors follow the tool's one-line error format and exit 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# -- output helpers ---------------------------------------------------------

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        # JSON has no inf/nan; a failed or undefined value is reported as null.
        return v if math.isfinite(v) else None
    return obj


def write_json(path: Path, doc: dict) -> None:
    atomic_write_text(path, json.dumps(_jsonable(doc), indent=2, allow_nan=False) + "\n")


def _num(v) -> str:
    v = float(v)
    return repr(v) if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")


def write_rows(path: Path, header: Sequence[str], rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_num(v) if isinstance(v, (float, np.floating)) else str(v) for v in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_loss_curve(path: Path, report) -> None:
    rows = [(i + 1, tl, vl) for i, (tl, vl) in enumerate(zip(report.train_loss, report.val_loss))]
    write_rows(path, ("epoch", "train_loss", "val_loss"), rows)


def _out_dir(args, cfg: RunConfig) -> Path:
    out = Path(args.out if args.out is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    return cfg.with_overrides(data=args.data, seed=args.seed)


# -- subcommands ------------------------------------------------------------

def cmd_synth(args) -> dict:
    cfg = _run_config(args)
    seed = cfg.seed
    hp = cfg.hyperparams
    out = _out_dir(args, cfg)
    path = synth_generate(args.kind, args.rows, seed, out / f"{args.kind}.csv", hp.window_len + hp.horizon + 10)
    print(f"wrote {args.rows} rows to {path}")
    return {"path": path}


def cmd_preprocess(args) -> dict:
    cfg = _run_config(args)
    prep = prepare(cfg)
    out = _out_dir(args, cfg)
    write_frame_csv(prep.cleaned, out / "cleaned.csv")
    report = {
        "command": "preprocess",
        "config": cfg.to_dict(),
        "cleaning": prep.cleaning.to_dict(),
        "splits": prep.split_summary(),
        "scaler": prep.scaler.to_dict(),
        "encoder": None if prep.encoder is None else prep.encoder.to_dict(),
    }
    write_json(out / "report.json", report)
    print(prep.cleaning.summary())
    return report


def _fit(prep: Prepared, hp: HyperParams):
    model = build_model(hp, prep.datasets["train"].feature_dim)
    return train(model, prep.datasets["train"], prep.datasets["val"], hp)


def _metrics_on(model, prep: Prepared, target: str, segment: str):
    ds = prep.datasets[segment]
    pred = prep.scaler.inverse_column(target, predict_scaled(model, ds.inputs))
    actual = prep.scaler.inverse_column(target, ds.targets)
    return compute_metrics(actual, pred), pred, actual


def _checkpoint(model, prep: Prepared, cfg: RunConfig, best_epoch: int) -> Checkpoint:
    return Checkpoint(
        model=model,
        scaler=prep.scaler,
        target=cfg.target,
        input_columns=prep.input_columns,
        categorical=list(cfg.categorical),
        encoder=prep.encoder,
        config=cfg.to_dict(),
        best_epoch=best_epoch,
    )


def _checkpoint_path(args, out: Path) -> Path:
    return Path(args.checkpoint) if args.checkpoint else out / "checkpoint.json"


def cmd_train(args) -> dict:
    cfg = _run_config(args)
    prep = prepare(cfg)
    out = _out_dir(args, cfg)
    best, train_report = _fit(prep, cfg.hyperparams)
    val_metrics, _, _ = _metrics_on(best, prep, cfg.target, "val")
    save_checkpoint(_checkpoint(best, prep, cfg, train_report.best_epoch), _checkpoint_path(args, out))
    write_loss_curve(out / "loss_curve.csv", train_report)
    report = {
        "command": "train",
        "config": cfg.to_dict(),
        "cleaning": prep.cleaning.to_dict(),
        "splits": prep.split_summary(),
        "model": {"hyperparams": best.hp.to_dict(), "parameters": best.num_parameters()},
        "training": train_report.to_dict(),
        "validation_metrics": val_metrics.to_dict(),
    }
    write_json(out / "report.json", report)
    print(
        f"trained {train_report.epochs_completed} epochs (best {train_report.best_epoch}), "
        f"val MSE {train_report.best_val_loss:.6g}, val RMSE {val_metrics.rmse:.6g}"
    )
    return report


def cmd_tune(args) -> dict:
    cfg = _run_config(args)
    prep = prepare(cfg)
    out = _out_dir(args, cfg)
    base = cfg.hyperparams
    tuned = tune_hyperparams(
        prep.datasets["train"], prep.datasets["val"], base, cfg.ssa_config, epoch_budget=cfg.ssa.epoch_budget
    )
    # Full-length training for both the swarm's pick and the untuned defaults.
    best_model, best_report = _fit(prep, replace(tuned.best_hp, seed=base.seed))
    _, default_report = _fit(prep, base)
    tuned_val = best_report.best_val_loss
    default_val = default_report.best_val_loss
    defaults_optimal = not tuned.best_fitness < tuned.default_fitness
    save_checkpoint(_checkpoint(best_model, prep, cfg, best_report.best_epoch), _checkpoint_path(args, out))
    write_loss_curve(out / "loss_curve.csv", best_report)
    trace_rows = [(i, f) for i, f in enumerate(tuned.result.trace)]
    write_rows(out / "ssa_trace.csv", ("iteration", "best_fitness"), trace_rows)
    report = {
        "command": "tune",
        "config": cfg.to_dict(),
        "cleaning": prep.cleaning.to_dict(),
        "splits": prep.split_summary(),
        "search": {
            "evaluations": tuned.evaluations,
            "trace": list(tuned.result.trace),
            "best_position": [float(v) for v in tuned.result.best_position],
            "best_fitness": tuned.best_fitness,
            "default_fitness": tuned.default_fitness,
            "defaults_optimal": defaults_optimal,
        },
        "tuned_hyperparams": replace(tuned.best_hp, seed=base.seed).to_dict(),
        "full_training": {
            "tuned_val_mse": tuned_val,
            "default_val_mse": default_val,
            "tuned_not_worse": tuned_val <= default_val,
            "tuned": best_report.to_dict(),
            "defaults": default_report.to_dict(),
        },
    }
    write_json(out / "report.json", report)
    verdict = "defaults were optimal among evaluated points" if defaults_optimal else "swarm improved on defaults"
    print(f"tuned val MSE {tuned_val:.6g} vs defaults {default_val:.6g}; {verdict}")
    return report


def _frame_for_checkpoint(ckpt: Checkpoint, args, cfg: RunConfig) -> TimeSeriesFrame:
    path = args.data if args.data is not None else cfg.data
    if path is None:
        raise ConfigError("no input data: pass --data or set 'data' in the config")
    frame = read_csv(path, ckpt.target, ckpt.categorical)
    columns = list(frame.data.columns)
    if columns != list(ckpt.input_columns):
        raise SchemaError(f"data columns {columns} do not match checkpoint columns {list(ckpt.input_columns)}")
    return frame


def _require_checkpoint(args, out: Path) -> Checkpoint:
    path = _checkpoint_path(args, out)
    return load_checkpoint(path)


def cmd_evaluate(args) -> dict:
    cfg = _run_config(args)
    out = _out_dir(args, cfg)
    ckpt = _require_checkpoint(args, out)
    trained_cfg = RunConfig.from_dict({**ckpt.config, "data": None})
    frame = _frame_for_checkpoint(ckpt, args, cfg)
    cleaned, cleaning = clean(frame, trained_cfg.cleaning.missing_row_threshold, trained_cfg.cleaning.sigma_k)
    hp = ckpt.model.hp
    segments = dict(zip(("train", "val", "test"), chrono_split(cleaned, trained_cfg.split)))
    encoded = {k: encode_frame(v, ckpt.encoder) for k, v in segments.items()}
    for seg in encoded.values():
        model_input(seg, None, ckpt.scaler)
    test = make_windows(scale_frame(encoded["test"], ckpt.scaler), hp.window_len, hp.horizon)
    if len(test) == 0:
        raise SchemaError(f"test segment of {len(encoded['test'])} rows yields no windows")
    pred = ckpt.scaler.inverse_column(ckpt.target, predict_scaled(ckpt.model, test.inputs))
    actual = ckpt.scaler.inverse_column(ckpt.target, test.targets)
    metrics = compute_metrics(actual, pred)
    rows = []
    for w in range(len(test)):
        for s in range(hp.horizon):
            rows.append((w, s + 1, str(test.target_dates[w, s]), float(actual[w, s]), float(pred[w, s])))
    write_rows(out / "predictions.csv", ("window", "step", "date", "actual", "predicted"), rows)
    report = {
        "command": "evaluate",
        "checkpoint": {"target": ckpt.target, "best_epoch": ckpt.best_epoch, "hyperparams": hp.to_dict()},
        "cleaning": cleaning.to_dict(),
        "test_windows": len(test),
        "test_metrics": metrics.to_dict(),
    }
    if cfg.kfold.enabled:
        dev = scale_frame(
            encoded["train"].replace(pd.concat([encoded["train"].data, encoded["val"].data])), ckpt.scaler
        )
        dev_ds = make_windows(dev, hp.window_len, hp.horizon)
        report["kfold"] = kfold_cv(dev_ds, hp, ckpt.scaler, ckpt.target, cfg.kfold.k).to_dict()
    write_json(out / "report.json", report)
    print(
        f"test R2 {_fmt(metrics.r2)}, MAPE {_fmt(metrics.mape_percent)}%, "
        f"RMSE {metrics.rmse:.6g}, MAE {metrics.mae:.6g} over {len(test)} windows"
    )
    return report


def _fmt(v: Optional[float]) -> str:
    return "undefined" if v is None else f"{v:.6g}"


def cmd_predict(args) -> dict:
    cfg = _run_config(args)
    out = _out_dir(args, cfg)
    ckpt = _require_checkpoint(args, out)
    trained_cfg = RunConfig.from_dict({**ckpt.config, "data": None})
    frame = _frame_for_checkpoint(ckpt, args, cfg)
    cleaned, _ = clean(frame, trained_cfg.cleaning.missing_row_threshold, trained_cfg.cleaning.sigma_k)
    hp = ckpt.model.hp
    if len(cleaned) < hp.window_len:
        raise SchemaError(f"predict needs at least {hp.window_len} rows after cleaning, got {len(cleaned)}")
    tail = model_input(cleaned.tail(hp.window_len), ckpt.encoder, ckpt.scaler)
    forecast = predict(ckpt.model, ckpt.scaler, tail, ckpt.target)
    last = cleaned.dates[-1]
    dates = [(last + pd.Timedelta(days=i)).strftime("%Y-%m-%d") for i in range(1, hp.horizon + 1)]
    write_rows(out / "predictions.csv", ("date", "step", "forecast"),
               [(d, i + 1, float(v)) for i, (d, v) in enumerate(zip(dates, forecast))])
    for d, v in zip(dates, forecast):
        print(f"{d} {v:.6g}")
    return {"dates": dates, "forecast": [float(v) for v in forecast]}


COMMANDS = {
    "synth": cmd_synth,
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "tune": cmd_tune,
    "evaluate": cmd_evaluate,
    "predict": cmd_predict,
}


# -- argument parsing -------------------------------------------------------

def _seed(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be in [0, 2^64), got {value}")
    return value


def _positive(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="forecast", description="CNN-BiGRU price forecasting with swarm hyperparameter tuning.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="<command>", parser_class=_Parser)
    sub.required = True
    helps = {
        "synth": "write a seeded synthetic price CSV",
        "preprocess": "clean, split and scale data; write cleaned.csv and report.json",
        "train": "train a model; write checkpoint.json, report.json and loss_curve.csv",
        "tune": "swarm hyperparameter search then full training; also writes ssa_trace.csv",
        "evaluate": "score a checkpoint on the test split; write predictions.csv and report.json",
        "predict": "forecast the next horizon days after the data; write predictions.csv",
    }
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, help=helps[name], description=helps[name])
        if name == "synth":
            p.add_argument("kind", choices=KINDS, help="generator family")
            p.add_argument("--rows", type=_positive, default=800, help="number of daily rows (default 800)")
        p.add_argument("--config", metavar="PATH", help="YAML run configuration (defaults apply when omitted)")
        p.add_argument("--data", metavar="PATH", help="input CSV; overrides the config's data entry")
        p.add_argument("--checkpoint", metavar="PATH",
                       help="checkpoint file to write (train/tune) or read (evaluate/predict); "
                            "default <out>/checkpoint.json")
        p.add_argument("--out", metavar="DIR", help="output directory; overrides the config's output_dir")
        p.add_argument("--seed", type=_seed, metavar="U64", help="run seed; overrides the config's seed")
        p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        if args.verbose:
            logging.getLogger("pricecast").setLevel(logging.INFO)
        COMMANDS[args.command](args)
        return 0
    except ForecastError as exc:
        print(f"error[{exc.code}]: {_one_line(exc)}", file=sys.stderr)
        return exc.exit_status
    except OSError as exc:
        print(f"error[E_IO]: {_one_line(exc)}", file=sys.stderr)
        return 2
    except (FloatingPointError, OverflowError) as exc:
        print(f"error[E_NUMERIC]: {_one_line(exc)}", file=sys.stderr)
        return 3


def _one_line(exc: BaseException) -> str:
    return " ".join(str(exc).split()) or type(exc).__name__


if __name__ == "__main__":
    sys.exit(main())
