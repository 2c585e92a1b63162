"""Render run artifacts to figures (PNG) and delimited tables."""
from __future__ import annotations

import csv
import json
import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from . import metrics

log = logging.getLogger(__name__)


def read_history_csv(path: Path) -> list[dict[str, float]]:
    with open(path, newline="") as f:
        return [
            {k: float(v) for k, v in row.items()} for row in csv.DictReader(f)
        ]


def render_history_figure(histories: dict[int, list[dict[str, float]]], out_path: Path) -> None:
    """Two panels: per-fold train/val loss and per-fold validation accuracy."""
    fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(10, 4))
    for fold in sorted(histories):
        rows = histories[fold]
        epochs = [r["epoch"] for r in rows]
        ax_loss.plot(epochs, [r["train_loss"] for r in rows], alpha=0.6, label=f"fold {fold} train")
        ax_loss.plot(
            epochs, [r["val_loss"] for r in rows], linestyle="--", alpha=0.8, label=f"fold {fold} val"
        )
        ax_acc.plot(epochs, [r["val_acc"] for r in rows], label=f"fold {fold}")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("loss")
    ax_loss.set_title("training / validation loss")
    ax_acc.set_xlabel("epoch")
    ax_acc.set_ylabel("validation accuracy")
    ax_acc.set_ylim(0.0, 1.05)
    ax_acc.set_title("validation accuracy")
    ax_acc.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)


def render_confusion_figure(matrix: np.ndarray, out_path: Path, class_names=None) -> None:
    matrix = np.asarray(matrix)
    fig, ax = plt.subplots(figsize=(6, 5))
    im = ax.imshow(matrix, cmap="viridis")
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    ax.set_title("test confusion matrix")
    if class_names is not None and len(class_names) <= 32:
        ax.set_xticks(range(len(class_names)))
        ax.set_yticks(range(len(class_names)))
        ax.set_xticklabels(class_names, rotation=90, fontsize=6)
        ax.set_yticklabels(class_names, fontsize=6)
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)


def generate_report(run_dir: str | Path, out_dir: str | Path | None = None) -> list[Path]:
    """Build figures and tables from a completed run directory.

    Reads ``metrics.json`` plus the fold history CSVs and writes
    ``history.png``, ``confusion.png``, ``report.csv`` and ``report.txt``.
    """
    run_dir = Path(run_dir)
    out = Path(out_dir) if out_dir is not None else run_dir
    out.mkdir(parents=True, exist_ok=True)

    metrics_path = run_dir / "metrics.json"
    if not metrics_path.is_file():
        raise FileNotFoundError(f"{metrics_path} not found; run `phonofuse train` first")
    payload = json.loads(metrics_path.read_text())

    written: list[Path] = []

    histories = {}
    for path in sorted(run_dir.glob("fold*_history.csv")):
        fold = int(path.stem.replace("fold", "").replace("_history", ""))
        histories[fold] = read_history_csv(path)
    if histories:
        history_png = out / "history.png"
        render_history_figure(histories, history_png)
        written.append(history_png)

    confusion_png = out / "confusion.png"
    render_confusion_figure(np.asarray(payload["test"]["confusion"]), confusion_png)
    written.append(confusion_png)

    test = payload["test"]
    report = metrics.MetricsReport(
        accuracy=test["accuracy"],
        per_class_precision=test["per_class"]["precision"],
        per_class_recall=test["per_class"]["recall"],
        per_class_f1=test["per_class"]["f1"],
        per_class_accuracy=test["per_class"]["accuracy"],
        support=test["per_class"]["support"],
        macro_precision=test["macro"]["precision"],
        macro_recall=test["macro"]["recall"],
        macro_f1=test["macro"]["f1"],
        weighted_precision=test["weighted"]["precision"],
        weighted_recall=test["weighted"]["recall"],
        weighted_f1=test["weighted"]["f1"],
        averaging=test["averaging"],
        count=test["count"],
    )
    label = f"{payload['scheme']}/{payload['strategy']}"
    table = metrics.results_table({label: report})
    (out / "report.txt").write_text(table.text)
    (out / "report.csv").write_text(table.to_csv())
    written.extend([out / "report.txt", out / "report.csv"])

    log.info("report written: %s", ", ".join(str(p) for p in written))
    return written
