"""Evaluation metrics: confusion matrix, per-class P/R/F1, weighted F1.

Weighted F1 averages per-class F1 scores with class-support weights, the
standard choice for imbalanced emotion classes.  A class missing from both
predictions and labels gets F1 = 0 with zero weight.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class EvalReport:
    weighted_f1: float
    accuracy: float
    precision: np.ndarray  # (C,)
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray  # true-label counts per class
    confusion: np.ndarray  # (C, C) counts, rows = true class
    label_names: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "weighted_f1": self.weighted_f1,
            "accuracy": self.accuracy,
            "per_class": {
                name: {
                    "precision": float(self.precision[i]),
                    "recall": float(self.recall[i]),
                    "f1": float(self.f1[i]),
                    "support": int(self.support[i]),
                }
                for i, name in enumerate(self.label_names)
            },
            "confusion": self.confusion.astype(int).tolist(),
        }

    def render(self) -> str:
        width = max([len(n) for n in self.label_names] + [9])
        lines = [
            f"weighted_f1 = {self.weighted_f1:.6f}",
            f"accuracy    = {self.accuracy:.6f}",
            "",
            f"{'class':<{width}}  {'prec':>8}  {'recall':>8}  {'f1':>8}  {'support':>8}",
        ]
        for i, name in enumerate(self.label_names):
            lines.append(
                f"{name:<{width}}  {self.precision[i]:>8.4f}  {self.recall[i]:>8.4f}  {self.f1[i]:>8.4f}  {int(self.support[i]):>8}"
            )
        lines.append("")
        lines.append("confusion matrix (rows = true, cols = predicted):")
        header = " " * (width + 2) + "".join(f"{n[:6]:>8}" for n in self.label_names)
        lines.append(header)
        for i, name in enumerate(self.label_names):
            lines.append(f"{name:<{width}}  " + "".join(f"{int(c):>8}" for c in self.confusion[i]))
        return "\n".join(lines)


def confusion_matrix(y_true: np.ndarray, y_pred: np.ndarray, n_classes: int) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true, dtype=int), np.asarray(y_pred, dtype=int)), 1)
    return cm


def evaluate_predictions(y_true, y_pred, label_names) -> EvalReport:
    y_true = np.asarray(y_true, dtype=int)
    y_pred = np.asarray(y_pred, dtype=int)
    c = len(label_names)
    cm = confusion_matrix(y_true, y_pred, c)
    support = cm.sum(axis=1).astype(np.float64)
    predicted = cm.sum(axis=0).astype(np.float64)
    tp = np.diag(cm).astype(np.float64)
    precision = np.divide(tp, predicted, out=np.zeros(c), where=predicted > 0)
    recall = np.divide(tp, support, out=np.zeros(c), where=support > 0)
    denom = precision + recall
    f1 = np.divide(2.0 * precision * recall, denom, out=np.zeros(c), where=denom > 0)
    total = support.sum()
    weighted_f1 = float((support / total) @ f1) if total > 0 else 0.0
    accuracy = float(tp.sum() / total) if total > 0 else 0.0
    return EvalReport(
        weighted_f1=weighted_f1,
        accuracy=accuracy,
        precision=precision,
        recall=recall,
        f1=f1,
        support=support.astype(np.int64),
        confusion=cm,
        label_names=tuple(label_names),
    )
