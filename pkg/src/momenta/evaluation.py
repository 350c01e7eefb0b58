"""Scoring trained models, the majority-class baseline and cross-dataset transfer."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Sequence

import torch

from .encoders import EmbeddingCache
from .metrics import MetricsReport, score
from .model import MomentaNet
from .training import TrainConfig, encode_split, train
from .types import (
    BinaryHarm,
    DatasetManifest,
    HarmLabel,
    MemeRecord,
    Split,
    TargetLabel,
    concat_manifests,
    merge_to_binary,
)


class EvalTask(str, Enum):
    HARM2 = "harm2"
    HARM3 = "harm3"
    TARGET = "target"


CLASS_NAMES = {
    EvalTask.HARM2: [c.value for c in BinaryHarm],
    EvalTask.HARM3: [c.value for c in HarmLabel],
    EvalTask.TARGET: [c.value for c in TargetLabel],
}


def true_labels(records: Sequence[MemeRecord], task: EvalTask) -> list[int]:
    if task is EvalTask.HARM2:
        return [merge_to_binary(r.harm).ordinal for r in records]
    if task is EvalTask.HARM3:
        return [r.harm.ordinal for r in records]
    return [r.target.ordinal for r in records]  # type: ignore[union-attr]


def scoped_records(records: Sequence[MemeRecord], task: EvalTask) -> list[MemeRecord]:
    """Target scoring only covers harmful memes."""
    if task is EvalTask.TARGET:
        return [r for r in records if r.harm.is_harmful]
    return list(records)


def _split_records(manifest: DatasetManifest, split: Optional[str]) -> list[MemeRecord]:
    return manifest.by_split(split) if split else list(manifest.records)


@torch.no_grad()
def predict(model: MomentaNet, records: Sequence[MemeRecord], cache: EmbeddingCache, task: EvalTask) -> tuple[list[int], str]:
    """Predicted class indices for ``task`` plus a mode tag describing how harm2 was obtained."""
    c_harm = model.config.c_harm
    if task is EvalTask.HARM3 and c_harm != 3:
        raise ValueError("harm3 evaluation needs a 3-class model")
    data = encode_split(records, cache, c_harm)
    trace = model(data.batch)
    if task is EvalTask.TARGET:
        return trace.logits_target.argmax(dim=-1).tolist(), "harmful-only"
    pred = trace.logits_harm.argmax(dim=-1)
    if task is EvalTask.HARM2:
        if c_harm == 2:
            return pred.tolist(), "native-2class"
        return [int(p != HarmLabel.HARMLESS.ordinal) for p in pred.tolist()], "merged-3class"
    return pred.tolist(), "3class"


def evaluate(
    model: MomentaNet,
    manifest: DatasetManifest,
    cache: EmbeddingCache,
    task: str,
    split: Optional[str] = Split.TEST.value,
) -> MetricsReport:
    task = EvalTask(task)
    records = scoped_records(_split_records(manifest, split), task)
    if not records:
        raise ValueError(f"no records to score for {task.value} on split {split}")
    pred, mode = predict(model, records, cache, task)
    return score(task.value, true_labels(records, task), pred, CLASS_NAMES[task], mode)


def majority_baseline(
    train_manifest: DatasetManifest,
    test_manifest: DatasetManifest,
    task: str,
    train_split: Optional[str] = Split.TRAIN.value,
    test_split: Optional[str] = Split.TEST.value,
) -> MetricsReport:
    """Predict the most frequent training class everywhere (ties go to the lower ordinal)."""
    task = EvalTask(task)
    train_records = scoped_records(_split_records(train_manifest, train_split), task)
    if not train_records:
        raise ValueError("majority baseline needs a non-empty training set")
    counts = Counter(true_labels(train_records, task))
    majority = min(counts, key=lambda c: (-counts[c], c))
    test_records = scoped_records(_split_records(test_manifest, test_split), task)
    if not test_records:
        raise ValueError("majority baseline needs a non-empty test set")
    truth = true_labels(test_records, task)
    return score(task.value, truth, [majority] * len(truth), CLASS_NAMES[task], "majority")


# --- transfer -----------------------------------------------------------------


@dataclass
class TransferTable:
    rows: list[str]
    columns: list[str]
    cells: dict = field(default_factory=dict)  # (row, column, task) -> MetricsReport

    def macro_f1(self, row: str, column: str, task: str) -> float:
        return self.cells[(row, column, task)].macro_f1

    def to_dict(self) -> dict:
        return {
            "rows": self.rows,
            "columns": self.columns,
            "tasks": [t.value for t in EvalTask],
            "macro_f1": {
                row: {col: {t.value: round(self.macro_f1(row, col, t.value), 6) for t in EvalTask} for col in self.columns}
                for row in self.rows
            },
        }


def transfer_matrix(
    manifests: Sequence[DatasetManifest],
    cache: EmbeddingCache,
    config: TrainConfig,
    combined: bool = True,
) -> TransferTable:
    """Train on each dataset (and optionally their union), score macro-F1 on every test split.

    One 3-class model per row provides harm3 and target scores. harm2 comes from
    merging its outputs unless ``config.c_harm == 2``, in which case a native
    binary model is trained as well.
    """
    if len(manifests) < 2:
        raise ValueError("transfer needs at least two datasets")
    datasets = list(manifests)
    if combined:
        datasets.append(concat_manifests(manifests, name="combined"))
    names = [m.name for m in datasets]
    if len(set(names)) != len(names):
        raise ValueError(f"dataset names must be unique, got {names}")

    table = TransferTable(rows=names, columns=names)
    for row in datasets:
        model3, _ = train(row, cache, replace(config, c_harm=3))
        model2 = train(row, cache, replace(config, c_harm=2))[0] if config.c_harm == 2 else model3
        for col in datasets:
            table.cells[(row.name, col.name, EvalTask.HARM2.value)] = evaluate(model2, col, cache, "harm2")
            table.cells[(row.name, col.name, EvalTask.HARM3.value)] = evaluate(model3, col, cache, "harm3")
            table.cells[(row.name, col.name, EvalTask.TARGET.value)] = evaluate(model3, col, cache, "target")
    return table

