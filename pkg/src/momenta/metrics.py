"""Accuracy, macro-F1 and macro-averaged mean absolute error over ordinal class indices."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


def _check(true: Sequence[int], pred: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    t = np.asarray(true, dtype=np.int64)
    p = np.asarray(pred, dtype=np.int64)
    if t.shape != p.shape:
        raise ValueError(f"length mismatch: {t.shape[0] if t.ndim else 0} vs {p.shape[0] if p.ndim else 0}")
    if t.size == 0:
        raise ValueError("metrics need at least one item")
    return t, p


def confusion_matrix(true: Sequence[int], pred: Sequence[int], num_classes: int) -> np.ndarray:
    """Rows are true classes, columns predicted."""
    t, p = _check(true, pred)
    out = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(out, (t, p), 1)
    return out


def accuracy(true: Sequence[int], pred: Sequence[int]) -> float:
    t, p = _check(true, pred)
    return 100.0 * float(np.mean(t == p))


def per_class_f1(true: Sequence[int], pred: Sequence[int], num_classes: int) -> list[Optional[float]]:
    """F1 per class as a fraction; None for classes absent from both sequences."""
    cm = confusion_matrix(true, pred, num_classes)
    out: list[Optional[float]] = []
    for c in range(num_classes):
        tp = cm[c, c]
        support, predicted = cm[c].sum(), cm[:, c].sum()
        if support == 0 and predicted == 0:
            out.append(None)
        else:
            out.append(float(2 * tp / (support + predicted)))
    return out


def macro_f1(true: Sequence[int], pred: Sequence[int], num_classes: Optional[int] = None) -> float:
    """Mean per-class F1 (percent) over classes seen in either sequence."""
    t, p = _check(true, pred)
    k = num_classes if num_classes is not None else int(max(t.max(), p.max())) + 1
    scores = [s for s in per_class_f1(t, p, k) if s is not None]
    return 100.0 * float(np.mean(scores))


def mmae(true: Sequence[int], pred: Sequence[int], num_classes: int) -> float:
    """Mean over true classes present of the mean ``|pred - true|`` within the class."""
    t, p = _check(true, pred)
    errs = np.abs(p - t)
    per_class = [errs[t == c].mean() for c in range(num_classes) if np.any(t == c)]
    if not per_class:
        raise ValueError("no class has support")
    return float(np.mean(per_class))


@dataclass
class MetricsReport:
    task: str
    accuracy: float
    macro_f1: float
    mmae: float
    per_class_f1: list
    confusion: list
    class_names: list
    n: int
    mode: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def support(self) -> list[int]:
        return [int(sum(row)) for row in self.confusion]

    def to_dict(self) -> dict:
        out = {
            "task": self.task,
            "mode": self.mode,
            "n": self.n,
            "accuracy": round(self.accuracy, 6),
            "macro_f1": round(self.macro_f1, 6),
            "mmae": round(self.mmae, 6),
            "per_class_f1": [None if v is None else round(100.0 * v, 6) for v in self.per_class_f1],
            "class_names": list(self.class_names),
            "support": self.support,
            "confusion": [list(map(int, row)) for row in self.confusion],
        }
        if self.extra:
            out["extra"] = self.extra
        return out


def score(task: str, true: Sequence[int], pred: Sequence[int], class_names: Sequence[str], mode: str = "") -> MetricsReport:
    k = len(class_names)
    return MetricsReport(
        task=task,
        accuracy=accuracy(true, pred),
        macro_f1=macro_f1(true, pred, k),
        mmae=mmae(true, pred, k),
        per_class_f1=per_class_f1(true, pred, k),
        confusion=confusion_matrix(true, pred, k).tolist(),
        class_names=list(class_names),
        n=len(true),
        mode=mode,
    )
