"""Experiment configs and the end-to-end train/evaluate pipeline.

A run consumes a dataset directory plus a JSON config and emits, under the
output directory: per-fold history CSVs, checkpoints, ``metrics.json`` (full
precision, byte-deterministic for a fixed config and seed), the results table
and ``run_summary.json``.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import data, metrics, models, training

log = logging.getLogger(__name__)

CONFIG_SCHEMA_VERSION = 1

# Seed offsets for the automatic unimodal runs behind late fusion.
AUDIO_SEED_OFFSET = 1001
TEXT_SEED_OFFSET = 2002


class ConfigError(ValueError):
    """Experiment config violates the schema."""


@dataclass
class ExperimentConfig:
    dataset: Path
    scheme: str
    strategy: str
    out_dir: Path
    train: training.TrainConfig
    model: dict = field(default_factory=dict)  # FusionSpec overrides
    grid: training.GridSpec | None = None
    folds: int = 5
    jobs: int = 1

    def validate(self) -> None:
        if self.scheme not in (data.SCHEME_A, data.SCHEME_B):
            raise ConfigError(f"scheme must be 'A' or 'B', got {self.scheme!r}")
        if self.strategy not in models.STRATEGIES:
            raise ConfigError(
                f"strategy must be one of {models.STRATEGIES}, got {self.strategy!r}"
            )
        if self.folds < 2:
            raise ConfigError("folds must be >= 2")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        self.train.validate()
        if self.grid is not None:
            self.grid.validate()

    def to_dict(self) -> dict:
        return {
            "schema_version": CONFIG_SCHEMA_VERSION,
            "dataset": str(self.dataset),
            "scheme": self.scheme,
            "strategy": self.strategy,
            "out_dir": str(self.out_dir),
            "model": self.model,
            "train": self.train.to_dict(),
            "grid": None
            if self.grid is None
            else {
                "learning_rates": self.grid.learning_rates,
                "batch_sizes": self.grid.batch_sizes,
                "dropout_rates": self.grid.dropout_rates,
            },
            "folds": self.folds,
            "jobs": self.jobs,
        }


def load_experiment_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as f:
            raw = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc

    version = raw.get("schema_version", CONFIG_SCHEMA_VERSION)
    if version != CONFIG_SCHEMA_VERSION:
        raise ConfigError(f"unsupported config schema_version {version}")
    for key in ("dataset", "scheme", "strategy", "out_dir"):
        if key not in raw:
            raise ConfigError(f"config missing required key {key!r}")

    try:
        train_cfg = training.TrainConfig.from_dict(raw.get("train", {}))
        grid = None if raw.get("grid") is None else training.GridSpec.from_dict(raw["grid"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc

    cfg = ExperimentConfig(
        dataset=Path(raw["dataset"]),
        scheme=str(raw["scheme"]),
        strategy=str(raw["strategy"]),
        out_dir=Path(raw["out_dir"]),
        train=train_cfg,
        model=dict(raw.get("model", {})),
        grid=grid,
        folds=int(raw.get("folds", 5)),
        jobs=int(raw.get("jobs", 1)),
    )
    cfg.validate()
    return cfg


def build_spec(cfg: ExperimentConfig, manifest: data.DatasetManifest) -> models.FusionSpec:
    overrides = cfg.model
    spec = models.FusionSpec(
        strategy=cfg.strategy,
        da=manifest.da,
        dt=manifest.dt,
        n_classes=manifest.class_count,
        hidden=overrides.get("hidden"),
        dropout_p=float(overrides.get("dropout_p", 0.1)),
        normalize=overrides.get("normalize", models.NORM_L2),
        audio_checkpoint=overrides.get("audio_checkpoint"),
        text_checkpoint=overrides.get("text_checkpoint"),
    )
    return spec


def evaluate_ids(
    model: models.FusionModel, manifest: data.DatasetManifest, ids
) -> tuple[metrics.MetricsReport, np.ndarray]:
    """Eval-mode forward over the given samples; returns (report, confusion)."""
    xa, xt, y, _ = data.gather_arrays(manifest, ids)
    logits = models.forward(model, xa, xt, training=False)
    preds = np.argmax(logits, axis=1) if y.size else np.zeros(0, dtype=np.int64)
    matrix = metrics.confusion(preds, y, manifest.class_count)
    return metrics.compute_metrics(matrix), matrix


def write_history_csv(path: Path, history: list[training.EpochStats]) -> None:
    lines = ["epoch,train_loss,val_loss,val_acc"]
    for e in history:
        lines.append(f"{e.epoch},{e.train_loss!r},{e.val_loss!r},{e.val_acc!r}")
    path.write_text("\n".join(lines) + "\n")


def write_grid_csv(path: Path, result: training.GridResult) -> None:
    lines = ["rank,learning_rate,batch_size,dropout_p,mean_val_acc,mean_val_loss"]
    for rank, cell in enumerate(result.ranking, 1):
        lines.append(
            f"{rank},{cell.learning_rate!r},{cell.batch_size},{cell.dropout_p!r},"
            f"{cell.mean_val_acc!r},{cell.mean_val_loss!r}"
        )
    path.write_text("\n".join(lines) + "\n")


def _dump_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


@dataclass
class RunSummary:
    config: dict
    scheme: str
    strategy: str
    seed: int
    best_fold: int
    selection_metric: float
    test_report: metrics.MetricsReport
    wall_clock_s: float
    artifacts: dict[str, str]


def _train_unimodal(
    strategy: str,
    cfg: ExperimentConfig,
    manifest: data.DatasetManifest,
    split: data.SplitAssignment,
    seed: int,
    out_path: Path,
) -> str:
    """Train one unimodal model to convergence and save its best checkpoint."""
    spec = models.FusionSpec(
        strategy=strategy,
        da=manifest.da,
        dt=manifest.dt,
        n_classes=manifest.class_count,
        dropout_p=float(cfg.model.get("dropout_p", 0.1)),
        normalize=cfg.model.get("normalize", models.NORM_L2),
    )
    sub_cfg = training.TrainConfig.from_dict({**cfg.train.to_dict(), "seed": seed})
    cv = training.cross_validate(
        spec, split, manifest, sub_cfg, k=cfg.folds, jobs=cfg.jobs
    )
    models.save_model(cv.checkpoint.model, out_path)
    log.info(
        "trained %s trunk: best fold %d, val acc %.4f",
        strategy,
        cv.best_fold,
        cv.selection_metric,
    )
    return str(out_path)


def run_experiment(cfg: ExperimentConfig) -> RunSummary:
    cfg.validate()
    started = time.perf_counter()
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    manifest = data.load_manifest(cfg.dataset)
    split = data.build_split(manifest, cfg.scheme, cfg.train.seed)
    spec = build_spec(cfg, manifest)
    artifacts: dict[str, str] = {}

    if cfg.strategy == models.STRATEGY_LATE and (
        spec.audio_checkpoint is None or spec.text_checkpoint is None
    ):
        log.info("late fusion without trunks: training unimodal models first")
        spec.audio_checkpoint = _train_unimodal(
            models.STRATEGY_AUDIO,
            cfg,
            manifest,
            split,
            cfg.train.seed + AUDIO_SEED_OFFSET,
            out / "audio_only.ckpt",
        )
        spec.text_checkpoint = _train_unimodal(
            models.STRATEGY_TEXT,
            cfg,
            manifest,
            split,
            cfg.train.seed + TEXT_SEED_OFFSET,
            out / "text_only.ckpt",
        )
        artifacts["audio_checkpoint"] = spec.audio_checkpoint
        artifacts["text_checkpoint"] = spec.text_checkpoint
    spec.validate()

    grid_summary = None
    final_config = cfg.train
    if cfg.grid is not None:
        grid_result = training.grid_search(
            spec, split, manifest, cfg.grid, cfg.train, k=cfg.folds, jobs=cfg.jobs
        )
        write_grid_csv(out / "grid_ranking.csv", grid_result)
        artifacts["grid_ranking"] = str(out / "grid_ranking.csv")
        cv = grid_result.winner_cv
        final_config = grid_result.winner_config
        spec = grid_result.winner_spec
        grid_summary = {
            "cells": len(grid_result.ranking),
            "winner": {
                "learning_rate": grid_result.winner.learning_rate,
                "batch_size": grid_result.winner.batch_size,
                "dropout_p": grid_result.winner.dropout_p,
                "mean_val_acc": grid_result.winner.mean_val_acc,
            },
        }
    else:
        cv = training.cross_validate(
            spec, split, manifest, cfg.train, k=cfg.folds, jobs=cfg.jobs
        )

    for outcome in cv.folds:
        hist_path = out / f"fold{outcome.fold}_history.csv"
        write_history_csv(hist_path, outcome.history)
        artifacts[f"fold{outcome.fold}_history"] = str(hist_path)

    best_path = out / "model_best.ckpt"
    models.save_model(cv.checkpoint.model, best_path)
    artifacts["checkpoint"] = str(best_path)

    if not split.test_ids:
        log.warning("test split is empty; emitting a zero-count report")
    report, matrix = evaluate_ids(cv.checkpoint.model, manifest, split.test_ids)

    metrics_payload = {
        "schema_version": CONFIG_SCHEMA_VERSION,
        "strategy": cfg.strategy,
        "scheme": cfg.scheme,
        "seed": cfg.train.seed,
        "folds": cfg.folds,
        "grid": grid_summary,
        "final_train_config": final_config.to_dict(),
        "cv": {
            "best_fold": cv.best_fold,
            "selection_metric": cv.selection_metric,
            "per_fold": [
                {
                    "fold": o.fold,
                    "best_epoch": o.checkpoint.epoch,
                    "val_acc": o.val_acc,
                    "val_loss": o.val_loss,
                    "epochs_run": len(o.history),
                }
                for o in cv.folds
            ],
        },
        "test": {
            **report.to_dict(),
            "confusion": matrix.tolist(),
        },
    }
    _dump_json(out / "metrics.json", metrics_payload)
    artifacts["metrics"] = str(out / "metrics.json")

    table = metrics.results_table({f"{cfg.scheme}/{cfg.strategy}": report})
    (out / "results.txt").write_text(table.text)
    (out / "results.csv").write_text(table.to_csv())
    artifacts["results_txt"] = str(out / "results.txt")
    artifacts["results_csv"] = str(out / "results.csv")

    wall = time.perf_counter() - started
    summary = RunSummary(
        config=cfg.to_dict(),
        scheme=cfg.scheme,
        strategy=cfg.strategy,
        seed=cfg.train.seed,
        best_fold=cv.best_fold,
        selection_metric=cv.selection_metric,
        test_report=report,
        wall_clock_s=wall,
        artifacts=artifacts,
    )
    _dump_json(
        out / "run_summary.json",
        {
            "config": summary.config,
            "best_fold": summary.best_fold,
            "selection_metric": summary.selection_metric,
            "test_accuracy": report.accuracy,
            "test_weighted_f1": report.weighted_f1,
            "wall_clock_s": wall,
            "artifacts": artifacts,
        },
    )
    log.info(
        "run complete: strategy=%s scheme=%s test_acc=%.4f (%.1fs)",
        cfg.strategy,
        cfg.scheme,
        report.accuracy,
        wall,
    )
    return summary
