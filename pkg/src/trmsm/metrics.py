"""Confusion-matrix based classification scores (per-class, weighted, macro, micro, mF1)."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray  # K x K, rows = gold, columns = predicted

    @property
    def K(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def confusion(gold: Sequence[int], pred: Sequence[int], num_classes: int) -> ConfusionMatrix:
    gold = np.asarray(gold, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    if gold.shape != pred.shape:
        raise ValueError(f"gold has {gold.size} labels but pred has {pred.size}")
    for name, arr in (("gold", gold), ("pred", pred)):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise ValueError(f"{name} label out of range 0..{num_classes - 1}")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (gold, pred), 1)
    return ConfusionMatrix(counts)


@dataclass(frozen=True)
class Scores:
    per_class_acc: list[float]
    per_class_f1: list[float]
    weighted_f1: float
    macro_f1: float
    micro_f1: float
    m_f1: float
    accuracy: float

    def to_dict(self) -> dict:
        return asdict(self)


def _ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    # 0/0 -> 0
    return np.divide(num, den, out=np.zeros_like(num, dtype=np.float64), where=den > 0)


def scores(cm: ConfusionMatrix) -> Scores:
    """Per-class accuracy is class recall; macro averages classes seen in gold or pred."""
    c = cm.counts.astype(np.float64)
    tp = np.diag(c)
    support = c.sum(axis=1)
    predicted = c.sum(axis=0)
    precision = _ratio(tp, predicted)
    recall = _ratio(tp, support)
    f1 = _ratio(2 * precision * recall, precision + recall)
    total = c.sum()
    present = (support + predicted) > 0
    weighted = float((f1 * support).sum() / total) if total else 0.0
    macro = float(f1[present].mean()) if present.any() else 0.0
    correct = tp.sum()
    # TP / (TP + (FP + FN)/2); FP and FN both total the misclassified count
    micro = float(correct / (correct + 0.5 * 2 * (total - correct))) if total else 0.0
    accuracy = float(correct / total) if total else 0.0
    return Scores(
        per_class_acc=recall.tolist(),
        per_class_f1=f1.tolist(),
        weighted_f1=weighted,
        macro_f1=macro,
        micro_f1=micro,
        m_f1=(macro + micro) / 2.0,
        accuracy=accuracy,
    )


def report(gold: Sequence[int], pred: Sequence[int], num_classes: int) -> dict:
    """JSON-ready metrics record including the confusion matrix."""
    cm = confusion(gold, pred, num_classes)
    out = scores(cm).to_dict()
    out["confusion"] = cm.counts.tolist()
    out["count"] = cm.total
    return out
