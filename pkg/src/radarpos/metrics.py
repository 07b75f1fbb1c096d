"""Classification metrics for long-tailed evaluation.

Macro-F1 is the unweighted mean of per-class F1 scores, with the 0/0
convention mapped to 0; classes absent from both truth and prediction
still contribute an F1 of 0 and are flagged in the report.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class EvalReport:
    accuracy: float
    macro_f1: float
    per_class: list  # dicts: class, precision, recall, f1, support
    confusion: np.ndarray  # (K, K) counts, rows = truth
    scenario: tuple | None = None
    absent_classes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "per_class": self.per_class,
            "confusion": self.confusion.tolist(),
            "scenario": list(self.scenario) if self.scenario else None,
            "absent_classes": self.absent_classes,
        }


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    y_true = np.asarray(y_true, dtype=int)
    y_pred = np.asarray(y_pred, dtype=int)
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def report_from_confusion(cm: np.ndarray, scenario=None) -> EvalReport:
    k = cm.shape[0]
    total = cm.sum()
    accuracy = float(np.trace(cm) / total) if total else 0.0
    per_class = []
    f1s = []
    absent = []
    for c in range(k):
        tp = cm[c, c]
        support = int(cm[c, :].sum())
        predicted = int(cm[:, c].sum())
        precision = tp / predicted if predicted else 0.0
        recall = tp / support if support else 0.0
        f1 = 2 * precision * recall / (precision + recall) if (precision + recall) else 0.0
        if support == 0 and predicted == 0:
            absent.append(c)
        per_class.append({
            "class": c,
            "precision": float(precision),
            "recall": float(recall),
            "f1": float(f1),
            "support": support,
        })
        f1s.append(f1)
    return EvalReport(
        accuracy=accuracy,
        macro_f1=float(np.mean(f1s)),
        per_class=per_class,
        confusion=cm,
        scenario=scenario,
        absent_classes=absent,
    )


def classification_report(y_true, y_pred, n_classes: int, scenario=None) -> EvalReport:
    return report_from_confusion(confusion_matrix(y_true, y_pred, n_classes), scenario)
