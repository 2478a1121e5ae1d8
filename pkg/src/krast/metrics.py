"""Evaluation metrics: top-1 accuracy, macro/weighted F1, confusion counts."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from .errors import InputError


@dataclass
class EvalReport:
    top1: float
    macro_f1: float
    weighted_f1: float
    confusion: np.ndarray  # (n_classes, n_classes) counts, rows = ground truth
    per_class_f1: List[float]
    support: List[int]

    @property
    def n_classes(self) -> int:
        return self.confusion.shape[0]

    def to_json(self) -> dict:
        return {
            "top1": self.top1,
            "macro_f1": self.macro_f1,
            "weighted_f1": self.weighted_f1,
            "per_class_f1": self.per_class_f1,
            "support": self.support,
            "confusion": self.confusion.tolist(),
        }


def evaluate(predictions: Sequence[int], labels: Sequence[int],
             n_classes: int) -> EvalReport:
    """Score predictions against labels over ``n_classes`` contiguous ids.

    Per-class F1 defines 0/0 as 0; macro F1 is the unweighted mean over all
    classes, weighted F1 the support-weighted mean. Confusion rows index the
    ground-truth class, columns the prediction.
    """
    preds = np.asarray(predictions, dtype=np.int64)
    labs = np.asarray(labels, dtype=np.int64)
    if preds.shape != labs.shape or preds.ndim != 1 or preds.size < 1:
        raise InputError(
            f"predictions/labels must be equal-length 1-D and non-empty, "
            f"got {preds.shape} vs {labs.shape}")
    for arr, what in ((preds, "prediction"), (labs, "label")):
        if arr.min() < 0 or arr.max() >= n_classes:
            raise InputError(f"{what} id outside [0, {n_classes})")

    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (labs, preds), 1)

    tp = np.diag(confusion).astype(np.float64)
    fp = confusion.sum(axis=0) - tp
    fn = confusion.sum(axis=1) - tp
    denom_p = tp + fp
    denom_r = tp + fn
    precision = np.divide(tp, denom_p, out=np.zeros_like(tp), where=denom_p > 0)
    recall = np.divide(tp, denom_r, out=np.zeros_like(tp), where=denom_r > 0)
    pr = precision + recall
    f1 = np.divide(2 * precision * recall, pr, out=np.zeros_like(tp), where=pr > 0)

    support = confusion.sum(axis=1)
    total = support.sum()
    weighted = float((f1 * support).sum() / total) if total > 0 else 0.0
    return EvalReport(
        top1=float((preds == labs).mean()),
        macro_f1=float(f1.mean()),
        weighted_f1=weighted,
        confusion=confusion,
        per_class_f1=[float(x) for x in f1],
        support=[int(s) for s in support],
    )
