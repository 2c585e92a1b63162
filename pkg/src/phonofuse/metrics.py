"""Confusion matrices, per-class accuracy/precision/recall/F1 and results tables.

Per-class quantities follow the one-vs-rest TP/FP/FN/TN reading with the
0/0 -> 0 convention. Aggregates are computed with plain Python sums over the
per-class floats so results are reproducible bit-for-bit.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal

import numpy as np


def confusion(preds, labels, n_classes: int) -> np.ndarray:
    """C x C count matrix; entry (i, j) counts true class i predicted as j."""
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape or preds.ndim != 1:
        raise ValueError(f"preds {preds.shape} and labels {labels.shape} must be equal-length vectors")
    m = np.zeros((n_classes, n_classes), dtype=np.int64)
    if preds.size == 0:
        return m
    for vec, name in ((preds, "prediction"), (labels, "label")):
        if vec.min() < 0 or vec.max() >= n_classes:
            raise ValueError(f"{name} outside [0, {n_classes})")
    np.add.at(m, (labels, preds), 1)
    return m


AVERAGE_MACRO = "macro"
AVERAGE_WEIGHTED = "weighted"


@dataclass
class MetricsReport:
    """Overall accuracy plus per-class and aggregated precision/recall/F1."""

    accuracy: float
    per_class_precision: list[float]
    per_class_recall: list[float]
    per_class_f1: list[float]
    per_class_accuracy: list[float]
    support: list[int]
    macro_precision: float
    macro_recall: float
    macro_f1: float
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float
    averaging: str
    count: int

    @property
    def precision(self) -> float:
        return self.macro_precision if self.averaging == AVERAGE_MACRO else self.weighted_precision

    @property
    def recall(self) -> float:
        return self.macro_recall if self.averaging == AVERAGE_MACRO else self.weighted_recall

    @property
    def f1(self) -> float:
        return self.macro_f1 if self.averaging == AVERAGE_MACRO else self.weighted_f1

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "per_class": {
                "precision": self.per_class_precision,
                "recall": self.per_class_recall,
                "f1": self.per_class_f1,
                "accuracy": self.per_class_accuracy,
                "support": self.support,
            },
            "macro": {
                "precision": self.macro_precision,
                "recall": self.macro_recall,
                "f1": self.macro_f1,
            },
            "weighted": {
                "precision": self.weighted_precision,
                "recall": self.weighted_recall,
                "f1": self.weighted_f1,
            },
            "averaging": self.averaging,
            "count": self.count,
        }


def _safe_div(num: float, den: float) -> float:
    return num / den if den > 0 else 0.0


def compute_metrics(matrix: np.ndarray, averaging: str = AVERAGE_WEIGHTED) -> MetricsReport:
    """Derive the report from a confusion matrix.

    An empty matrix yields an all-zero report with count 0. ``averaging`` only
    selects which aggregate the headline properties expose; both are computed.
    """
    if averaging not in (AVERAGE_MACRO, AVERAGE_WEIGHTED):
        raise ValueError(f"unknown averaging {averaging!r}")
    m = np.asarray(matrix, dtype=np.int64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"confusion matrix must be square, got {m.shape}")
    c = m.shape[0]
    total = int(m.sum())

    precision: list[float] = []
    recall: list[float] = []
    f1: list[float] = []
    class_acc: list[float] = []
    support: list[int] = []
    for cls in range(c):
        tp = int(m[cls, cls])
        fp = int(m[:, cls].sum()) - tp
        fn = int(m[cls, :].sum()) - tp
        tn = total - tp - fp - fn
        p = _safe_div(tp, tp + fp)
        r = _safe_div(tp, tp + fn)
        precision.append(p)
        recall.append(r)
        f1.append(_safe_div(2.0 * (p * r), p + r))
        class_acc.append(_safe_div(tp + tn, total))
        support.append(tp + fn)

    accuracy = _safe_div(int(np.trace(m)), total)
    macro_p = _safe_div(sum(precision), c)
    macro_r = _safe_div(sum(recall), c)
    macro_f = _safe_div(sum(f1), c)
    weighted_p = _safe_div(sum(s * p for s, p in zip(support, precision)), total)
    weighted_r = _safe_div(sum(s * r for s, r in zip(support, recall)), total)
    weighted_f = _safe_div(sum(s * f for s, f in zip(support, f1)), total)

    return MetricsReport(
        accuracy=accuracy,
        per_class_precision=precision,
        per_class_recall=recall,
        per_class_f1=f1,
        per_class_accuracy=class_acc,
        support=support,
        macro_precision=macro_p,
        macro_recall=macro_r,
        macro_f1=macro_f,
        weighted_precision=weighted_p,
        weighted_recall=weighted_r,
        weighted_f1=weighted_f,
        averaging=averaging,
        count=total,
    )


METRIC_COLUMNS = ("accuracy", "precision", "recall", "f1")


def format_metric(value: float) -> str:
    """Three decimals, ties rounded away from zero (0.9665 -> '0.967')."""
    return str(Decimal(repr(value)).quantize(Decimal("0.001"), rounding=ROUND_HALF_UP))


@dataclass
class ResultsTable:
    rows: list[dict]  # label + formatted metric strings + per-column best flags
    text: str

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["label", *METRIC_COLUMNS])
        for row in self.rows:
            writer.writerow([row["label"], *(row[c] for c in METRIC_COLUMNS)])
        return buf.getvalue()


def results_table(
    reports: dict[str, MetricsReport], baseline: MetricsReport | None = None
) -> ResultsTable:
    """One row per labelled report, metrics to 3 decimals, best per column flagged.

    Ties share the flag. ``baseline`` adds a trailing comparison row that also
    competes for the flags.
    """
    entries = list(reports.items())
    if baseline is not None:
        entries.append(("sota", baseline))

    rows = []
    for label, rep in entries:
        values = {
            "accuracy": rep.accuracy,
            "precision": rep.precision,
            "recall": rep.recall,
            "f1": rep.f1,
        }
        row = {"label": label}
        for col in METRIC_COLUMNS:
            row[col] = format_metric(values[col])
        rows.append(row)

    for col in METRIC_COLUMNS:
        if rows:
            best = max(Decimal(row[col]) for row in rows)
            for row in rows:
                row[f"{col}_best"] = Decimal(row[col]) == best

    label_width = max([len(r["label"]) for r in rows] + [len("label")])
    lines = [
        f"{'label':<{label_width}}  " + "  ".join(f"{c:>10}" for c in METRIC_COLUMNS)
    ]
    for row in rows:
        cells = []
        for col in METRIC_COLUMNS:
            marker = "*" if row[f"{col}_best"] else ""
            cells.append(f"{row[col] + marker:>10}")
        lines.append(f"{row['label']:<{label_width}}  " + "  ".join(cells))
    return ResultsTable(rows=rows, text="\n".join(lines) + "\n")
