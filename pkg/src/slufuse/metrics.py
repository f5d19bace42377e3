"""Classification metrics for single-label tasks."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def accuracy(preds, labels):
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape:
        raise ValueError(f"{preds.shape[0] if preds.ndim else 0} predictions vs {labels.shape[0] if labels.ndim else 0} labels")
    if preds.size == 0:
        raise ValueError("accuracy of an empty prediction set")
    return float(np.mean(preds == labels))


def confusion_matrix(preds, labels, num_classes):
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(labels), np.asarray(preds)), 1)
    return cm


def f1_scores(preds, labels, num_classes):
    """Returns ``(macro_f1, micro_f1, per_class_f1)``; F1 is 0 where P + R = 0."""
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.size == 0 or preds.shape != labels.shape:
        raise ValueError("f1 needs equal-length, non-empty predictions and labels")
    for arr, name in ((preds, "prediction"), (labels, "label")):
        if arr.min() < 0 or arr.max() >= num_classes:
            raise ValueError(f"{name} outside [0, {num_classes})")
    cm = confusion_matrix(preds, labels, num_classes)
    tp = np.diag(cm).astype(np.float64)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    denom = 2 * tp + fp + fn
    per_class = np.divide(2 * tp, denom, out=np.zeros_like(tp), where=denom > 0)
    micro_denom = 2 * tp.sum() + fp.sum() + fn.sum()
    micro = float(2 * tp.sum() / micro_denom) if micro_denom else 0.0
    return float(per_class.mean()), micro, per_class


@dataclass
class MetricReport:
    task: str
    model: str
    fusion_mode: str
    engine: str
    mix_fraction: float
    seed: int
    accuracy: float
    macro_f1: float
    micro_f1: float
    per_class_f1: list[float] = field(default_factory=list)
    n: int = 0

    @classmethod
    def compute(cls, preds, labels, num_classes, **cell):
        macro, micro, per_class = f1_scores(preds, labels, num_classes)
        return cls(accuracy=accuracy(preds, labels), macro_f1=macro, micro_f1=micro,
                   per_class_f1=per_class.tolist(), n=len(labels), **cell)
