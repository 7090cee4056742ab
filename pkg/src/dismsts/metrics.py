from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError


@dataclass
class MetricsReport:
    accuracy: float
    macro_f1: float
    mcc: float
    precision: list[float]
    recall: list[float]
    confusion: list[list[int]]  # rows: true class, columns: predicted class

    def as_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "mcc": self.mcc,
            "precision": self.precision,
            "recall": self.recall,
            "confusion": self.confusion,
        }

    def summary(self) -> dict:
        return {"accuracy": self.accuracy, "macro_f1": self.macro_f1, "mcc": self.mcc}


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise InputError(f"{y_true.shape[0]} labels vs {y_pred.shape[0]} predictions")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def report_from_confusion(cm) -> MetricsReport:
    """ACC, macro-F1 and multiclass MCC from a confusion matrix.

    Classes that are neither predicted nor present score F1 = 0 and still count
    in the macro average.
    """
    cm = np.asarray(cm, dtype=np.int64)
    total = int(cm.sum())
    if total == 0:
        raise InputError("cannot compute metrics on an empty split")
    tp = np.diag(cm).astype(np.float64)
    pred = cm.sum(axis=0).astype(np.float64)
    true = cm.sum(axis=1).astype(np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(pred > 0, tp / pred, 0.0)
        recall = np.where(true > 0, tp / true, 0.0)
        f1 = np.where(pred + true > 0, 2 * tp / (pred + true), 0.0)
    # integer covariances keep the perfect and no-association cases exact
    correct = int(np.trace(cm))
    t_k = [int(v) for v in cm.sum(axis=1)]
    p_k = [int(v) for v in cm.sum(axis=0)]
    cov_pt = correct * total - sum(a * b for a, b in zip(p_k, t_k))
    cov_pp = total * total - sum(a * a for a in p_k)
    cov_tt = total * total - sum(a * a for a in t_k)
    den2 = cov_pp * cov_tt
    if den2 == 0:
        mcc = 0.0
    else:
        root = math.isqrt(den2)
        mcc = cov_pt / root if root * root == den2 else cov_pt / math.sqrt(den2)
        mcc = min(1.0, max(-1.0, mcc))
    s = float(total)
    return MetricsReport(
        accuracy=correct / s,
        macro_f1=float(f1.mean()),
        mcc=float(mcc),
        precision=precision.tolist(),
        recall=recall.tolist(),
        confusion=cm.tolist(),
    )


def evaluate_predictions(y_true, y_pred, n_classes: int) -> MetricsReport:
    if len(y_true) == 0:
        raise InputError("cannot compute metrics on an empty split")
    return report_from_confusion(confusion_matrix(y_true, y_pred, n_classes))
