"""Confusion matrix, one-vs-rest counts, and the precision/recall/F1 suite.

Conventions: confusion rows are true classes, columns predicted. Per-class
counts treat that class as positive and everything else as negative.
Metrics with a zero denominator are reported as 0.0 and flagged rather
than raised, so a degenerate classifier still produces a full report.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


@dataclass
class MetricsReport:
    accuracy: float
    precision: list[float]
    recall: list[float]
    f1: list[float]
    class_accuracy: list[float]
    support: list[int]
    class_names: tuple[str, ...]
    zero_division_flags: list[str] = field(default_factory=list)


def confusion_matrix(y_true, y_pred, num_classes: int = 4) -> np.ndarray:
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.shape != y_pred.shape or y_true.ndim != 1:
        raise ValueError(
            f"label vectors must be equal-length 1-D, got {y_true.shape} "
            f"and {y_pred.shape}")
    for name, v in (("y_true", y_true), ("y_pred", y_pred)):
        if len(v) and (v.min() < 0 or v.max() >= num_classes):
            raise ValueError(f"{name} has labels outside [0, {num_classes})")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def _check_matrix(cm: np.ndarray):
    cm = np.asarray(cm)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ValueError(f"confusion matrix must be square, got {cm.shape}")
    if (cm < 0).any():
        raise ValueError("confusion matrix has negative entries")
    return cm


def one_vs_rest_counts(cm: np.ndarray, class_id: int) -> ConfusionCounts:
    cm = _check_matrix(cm)
    if not 0 <= class_id < cm.shape[0]:
        raise ValueError(f"class {class_id} outside matrix of size {cm.shape[0]}")
    total = int(cm.sum())
    tp = int(cm[class_id, class_id])
    fn = int(cm[class_id].sum()) - tp
    fp = int(cm[:, class_id].sum()) - tp
    return ConfusionCounts(tp=tp, tn=total - tp - fn - fp, fp=fp, fn=fn)


def _ratio(num: int, den: int, flags: list[str], label: str) -> float:
    if den == 0:
        flags.append(f"{label} undefined (0/0), reported as 0")
        return 0.0
    return num / den


def counts_metrics(c: ConfusionCounts, flags: list[str] | None = None,
                   label: str = "class"):
    """Precision, recall, F1, and binary accuracy from one-vs-rest counts."""
    flags = flags if flags is not None else []
    p = _ratio(c.tp, c.tp + c.fp, flags, f"{label} precision")
    r = _ratio(c.tp, c.tp + c.fn, flags, f"{label} recall")
    f1 = _ratio_f(2 * p * r, p + r, flags, f"{label} F1")
    acc = (c.tp + c.tn) / c.total if c.total else 0.0
    return p, r, f1, acc


def _ratio_f(num: float, den: float, flags: list[str], label: str) -> float:
    if den == 0.0:
        flags.append(f"{label} undefined (0/0), reported as 0")
        return 0.0
    return num / den


def compute_metrics(cm: np.ndarray, class_names=None) -> MetricsReport:
    """Full per-class report plus overall accuracy = trace / total."""
    cm = _check_matrix(cm)
    total = int(cm.sum())
    if total == 0:
        raise ValueError("confusion matrix is empty")
    k = cm.shape[0]
    names = tuple(class_names) if class_names else tuple(f"class{i}" for i in range(k))
    if len(names) != k:
        raise ValueError(f"{len(names)} names for a {k}-class matrix")
    flags: list[str] = []
    precision, recall, f1, class_acc = [], [], [], []
    for c in range(k):
        counts = one_vs_rest_counts(cm, c)
        p, r, f, a = counts_metrics(counts, flags, names[c])
        precision.append(p)
        recall.append(r)
        f1.append(f)
        class_acc.append(a)
    return MetricsReport(
        accuracy=int(np.trace(cm)) / total,
        precision=precision, recall=recall, f1=f1,
        class_accuracy=class_acc,
        support=[int(s) for s in cm.sum(axis=1)],
        class_names=names,
        zero_division_flags=flags)


def render_report(report: MetricsReport) -> str:
    """Human-readable table: one row per class with precision/recall/F1 to
    two decimals, then support and overall accuracy."""
    name_w = max(len("Diseases"), *(len(n) for n in report.class_names))
    header = (f"{'Diseases':<{name_w}}  {'Precision':>9}  {'Recall':>6}  "
              f"{'F1-score':>8}  {'Support':>7}")
    lines = [header, "-" * len(header)]
    for i, name in enumerate(report.class_names):
        lines.append(
            f"{name:<{name_w}}  {report.precision[i]:>9.2f}  "
            f"{report.recall[i]:>6.2f}  {report.f1[i]:>8.2f}  "
            f"{report.support[i]:>7d}")
    lines.append("-" * len(header))
    lines.append(f"accuracy: {report.accuracy:.4f} "
                 f"({sum(report.support)} samples)")
    for flag in report.zero_division_flags:
        lines.append(f"note: {flag}")
    return "\n".join(lines)


def report_to_json(report: MetricsReport, extra: dict | None = None) -> str:
    """Machine-readable report at full float precision, stable key order."""
    payload = {
        "accuracy": report.accuracy,
        "classes": [
            {
                "name": report.class_names[i],
                "precision": report.precision[i],
                "recall": report.recall[i],
                "f1": report.f1[i],
                "accuracy": report.class_accuracy[i],
                "support": report.support[i],
            }
            for i in range(len(report.class_names))
        ],
        "zero_division_flags": report.zero_division_flags,
    }
    if extra:
        payload.update(extra)
    return json.dumps(payload, indent=2, sort_keys=True)


def confusion_to_csv(cm: np.ndarray, class_names) -> str:
    """4x4 counts with a header row and column of class names; rows true,
    columns predicted."""
    cm = _check_matrix(cm)
    names = list(class_names)
    lines = ["true\\pred," + ",".join(names)]
    for i, name in enumerate(names):
        lines.append(name + "," + ",".join(str(int(v)) for v in cm[i]))
    return "\n".join(lines) + "\n"
