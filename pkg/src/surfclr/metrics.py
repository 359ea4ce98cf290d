"""Segmentation metrics accumulated through an integer confusion matrix.

All scores are derived from exact int64 counts, so accumulation order and
batch boundaries cannot change the result. Classes that never occur (no true
or predicted pixels) are excluded from the means rather than counted as 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import ContractError, DataError, ParameterError, ShapeError


@dataclass
class ConfusionMatrix:
    """K x K pixel counts; rows are true class, columns predicted class."""

    num_classes: int
    counts: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.num_classes < 2:
            raise ParameterError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.counts is None:
            self.counts = np.zeros((self.num_classes, self.num_classes), dtype=np.int64)
        else:
            self.counts = np.asarray(self.counts, dtype=np.int64)
            if self.counts.shape != (self.num_classes, self.num_classes):
                raise ShapeError(
                    f"counts must be ({self.num_classes}, {self.num_classes}), "
                    f"got {self.counts.shape}"
                )

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.num_classes != self.num_classes:
            raise ShapeError("cannot merge confusion matrices of different sizes")
        self.counts += other.counts
        return self


def accumulate(cm: ConfusionMatrix, truth, predicted) -> ConfusionMatrix:
    """Add one batch of label maps to the confusion matrix (in place)."""
    t = np.asarray(truth)
    p = np.asarray(predicted)
    if t.shape != p.shape:
        raise ShapeError(f"truth shape {t.shape} != prediction shape {p.shape}")
    if t.size == 0:
        return cm
    if not (np.issubdtype(t.dtype, np.integer) and np.issubdtype(p.dtype, np.integer)):
        raise DataError(f"labels must be integer arrays, got {t.dtype} and {p.dtype}")
    k = cm.num_classes
    for name, arr in (("truth", t), ("prediction", p)):
        lo, hi = int(arr.min()), int(arr.max())
        if lo < 0 or hi >= k:
            bad = lo if lo < 0 else hi
            raise DataError(f"{name} contains label {bad}, outside [0, {k - 1}]")
    flat = t.ravel().astype(np.int64) * k + p.ravel().astype(np.int64)
    cm.counts += np.bincount(flat, minlength=k * k).reshape(k, k)
    return cm


@dataclass
class MetricsReport:
    """Scores for one evaluation; None marks classes absent from the data."""

    num_classes: int
    per_class_iou: list
    miou: float
    f1: float
    average_accuracy: float
    per_class_recall: list
    pixel_counts: list
    pixel_accuracy: float

    def to_json_dict(self) -> dict:
        return {
            "num_classes": self.num_classes,
            "per_class_iou": self.per_class_iou,
            "miou": self.miou,
            "f1": self.f1,
            "average_accuracy": self.average_accuracy,
            "per_class_recall": self.per_class_recall,
            "pixel_counts": self.pixel_counts,
            "pixel_accuracy": self.pixel_accuracy,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "MetricsReport":
        return cls(
            num_classes=d["num_classes"],
            per_class_iou=d["per_class_iou"],
            miou=d["miou"],
            f1=d["f1"],
            average_accuracy=d["average_accuracy"],
            per_class_recall=d["per_class_recall"],
            pixel_counts=d["pixel_counts"],
            pixel_accuracy=d["pixel_accuracy"],
        )


def compute_report(cm: ConfusionMatrix) -> MetricsReport:
    """Derive IoU / F1 / recall-based scores from accumulated counts.

    mIoU averages IoU over classes with any true or predicted pixel.
    average_accuracy is the macro mean of per-class recall over classes
    present in the truth. F1 is the positive-class (label 1) score for binary
    problems and the macro mean over present classes otherwise; a binary
    problem where label 1 never occurs in truth or prediction falls back to
    the macro form so a perfect all-background prediction scores 1.0.
    """
    if cm.total == 0:
        raise ContractError("confusion matrix is empty; accumulate at least one pixel")
    k = cm.num_classes
    counts = cm.counts
    tp = [int(counts[c, c]) for c in range(k)]
    truth_px = [int(counts[c, :].sum()) for c in range(k)]
    pred_px = [int(counts[:, c].sum()) for c in range(k)]

    iou: list = []
    f1_per_class: list = []
    recall: list = []
    for c in range(k):
        fp = pred_px[c] - tp[c]
        fn = truth_px[c] - tp[c]
        union = tp[c] + fp + fn
        iou.append(tp[c] / union if union > 0 else None)
        f1_per_class.append(2 * tp[c] / (2 * tp[c] + fp + fn) if union > 0 else None)
        recall.append(tp[c] / truth_px[c] if truth_px[c] > 0 else None)

    present_iou = [v for v in iou if v is not None]
    miou = sum(present_iou) / len(present_iou)
    present_recall = [v for v in recall if v is not None]
    average_accuracy = sum(present_recall) / len(present_recall)

    if k == 2 and f1_per_class[1] is not None:
        f1 = f1_per_class[1]
    else:
        present_f1 = [v for v in f1_per_class if v is not None]
        f1 = sum(present_f1) / len(present_f1)

    pixel_accuracy = sum(tp) / cm.total
    return MetricsReport(
        num_classes=k,
        per_class_iou=iou,
        miou=miou,
        f1=f1,
        average_accuracy=average_accuracy,
        per_class_recall=recall,
        pixel_counts=truth_px,
        pixel_accuracy=pixel_accuracy,
    )


def render_table(rows: list[tuple[str, MetricsReport]]) -> str:
    """Fixed-width mIoU / F1 / average-accuracy table for terminal output."""
    name_w = max([len(name) for name, _ in rows] + [len("run")])
    header = f"{'run':<{name_w}}  {'mIoU':>7}  {'F1':>7}  {'AvgAcc':>7}  {'PixAcc':>7}"
    lines = [header, "-" * len(header)]
    for name, rep in rows:
        lines.append(
            f"{name:<{name_w}}  {rep.miou:>7.4f}  {rep.f1:>7.4f}  "
            f"{rep.average_accuracy:>7.4f}  {rep.pixel_accuracy:>7.4f}"
        )
    return "\n".join(lines)
