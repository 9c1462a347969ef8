"""Confusion matrix, per-class precision/recall/F1 and macro F1."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InsufficientDataError
from ..labels import LABELS, N_CLASSES


@dataclass(frozen=True)
class Metrics:
    confusion: np.ndarray       # rows = true label, columns = predicted
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray

    @property
    def macro_f1(self) -> float:
        return float(self.f1.mean())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.confusion) / self.confusion.sum())

    @property
    def n(self) -> int:
        return int(self.confusion.sum())

    def to_dict(self) -> dict:
        return {
            "macro_f1": self.macro_f1,
            "accuracy": self.accuracy,
            "n": self.n,
            "per_class": {lab.name: {"precision": float(self.precision[lab]),
                                     "recall": float(self.recall[lab]),
                                     "f1": float(self.f1[lab])} for lab in LABELS},
            "confusion": self.confusion.tolist(),
        }

    def confusion_csv(self) -> str:
        names = [lab.name for lab in LABELS]
        lines = ["true\\pred," + ",".join(names)]
        for name, row in zip(names, self.confusion):
            lines.append(name + "," + ",".join(str(int(v)) for v in row))
        return "\n".join(lines) + "\n"


def confusion_matrix(y_true, y_pred, n_classes: int = N_CLASSES) -> np.ndarray:
    y_true = np.asarray(y_true, int)
    y_pred = np.asarray(y_pred, int)
    cm = np.zeros((n_classes, n_classes), int)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def metrics_from_confusion(cm) -> Metrics:
    cm = np.asarray(cm, int)
    tp = np.diag(cm).astype(float)
    pred = cm.sum(axis=0)
    true = cm.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(pred > 0, tp / pred, 0.0)
        recall = np.where(true > 0, tp / true, 0.0)
        denom = precision + recall
        f1 = np.where(denom > 0, 2 * precision * recall / denom, 0.0)
    return Metrics(cm, precision, recall, f1)


def compute_metrics(y_true, y_pred, n_classes: int = N_CLASSES) -> Metrics:
    if len(y_true) == 0:
        raise InsufficientDataError("cannot evaluate on an empty set")
    return metrics_from_confusion(confusion_matrix(y_true, y_pred, n_classes))
