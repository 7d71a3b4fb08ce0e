"""Classification metrics: confusion matrix and macro-averaged scores."""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from telesto.errors import DataError

METRIC_NAMES = ("accuracy", "recall", "precision", "f1")


def confusion_matrix(y_true, y_pred, num_classes: int) -> np.ndarray:
    """Rows are true classes, columns predicted classes."""
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true, dtype=np.int64), np.asarray(y_pred, dtype=np.int64)), 1)
    return cm


def scores_from_confusion(cm: np.ndarray) -> dict:
    """Accuracy plus macro precision/recall, and F1 = 2PR/(P+R) on the macro averages.

    Macro averages run over classes that occur as a true or a predicted label; a
    class that is never predicted has precision 0.
    """
    cm = np.asarray(cm, dtype=np.float64)
    total = cm.sum()
    if total == 0:
        raise DataError("empty confusion matrix")
    tp = np.diag(cm)
    support = cm.sum(1)
    predicted = cm.sum(0)
    active = (support > 0) | (predicted > 0)
    precision = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)
    recall = np.divide(tp, support, out=np.zeros_like(tp), where=support > 0)
    p = float(precision[active].mean())
    r = float(recall[active].mean())
    return {
        "accuracy": float(tp.sum() / total),
        "recall": r,
        "precision": p,
        "f1": 2 * p * r / (p + r) if p + r > 0 else 0.0,
        "per_class_precision": precision.tolist(),
        "per_class_recall": recall.tolist(),
    }


def mean_scores(entries: Sequence[Mapping[str, float]], names: Sequence[str] = METRIC_NAMES) -> dict:
    if not entries:
        raise DataError("nothing to average")
    return {n: float(np.mean([e[n] for e in entries])) for n in names}
