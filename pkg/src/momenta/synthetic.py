"""Synthetic corpora for tests, demos and label-count reproductions."""

from __future__ import annotations

from typing import Mapping, Optional

import numpy as np

from .types import DatasetManifest, HarmLabel, MemeRecord, Split, TargetLabel

# (very_harmful, partially_harmful, harmless) and (individual, organization, community, society)
# per split, as published for the two meme collections.
PUBLISHED_COUNTS = {
    "harm-c": {
        "train": ((182, 882, 1949), (493, 66, 279, 226)),
        "validation": ((10, 51, 116), (29, 3, 16, 13)),
        "test": ((21, 103, 230), (59, 7, 32, 26)),
    },
    "harm-p": {
        "train": ((216, 1270, 1534), (797, 470, 111, 73)),
        "validation": ((17, 69, 91), (70, 12, 2, 1)),
        "test": ((25, 148, 182), (96, 54, 12, 8)),
    },
}


def manifest_from_counts(name: str, counts: Mapping[str, tuple], seed: int = 0) -> DatasetManifest:
    """Manifest whose per-split harm and target counts equal ``counts``.

    Targets are dealt to harmful records in a seeded shuffled order. If the target
    counts fall short of the harmful count (the published Harm-P table does), the
    shortfall goes to the most frequent target class so every harmful record keeps
    a target.
    """
    rng = np.random.default_rng(seed)
    records = []
    for split, (harm_counts, target_counts) in counts.items():
        very, partial, harmless = harm_counts
        n_harmful = very + partial
        if sum(target_counts) > n_harmful:
            raise ValueError(f"{name}/{split}: target counts {sum(target_counts)} exceed harmful count {n_harmful}")
        target_counts = list(target_counts)
        target_counts[int(np.argmax(target_counts))] += n_harmful - sum(target_counts)
        targets = [TargetLabel.from_ordinal(i) for i, c in enumerate(target_counts) for _ in range(c)]
        targets = [targets[i] for i in rng.permutation(len(targets))]
        harms = [HarmLabel.VERY_HARMFUL] * very + [HarmLabel.PARTIALLY_HARMFUL] * partial + [HarmLabel.HARMLESS] * harmless
        for i, harm in enumerate(harms):
            records.append(
                MemeRecord(
                    id=f"{name}-{split}-{i:05d}",
                    image_ref=f"{name}/{split}/{i:05d}.jpg",
                    ocr_text=f"meme {i}",
                    harm=harm,
                    target=targets[i] if harm.is_harmful else None,
                    split=Split(split),
                    source="synthetic",
                    width=640,
                    height=480,
                )
            )
    return DatasetManifest(name, tuple(records))


def published_manifest(name: str) -> DatasetManifest:
    return manifest_from_counts(name, PUBLISHED_COUNTS[name])


def random_corpus(
    n: int,
    seed: int,
    name: str = "synthetic",
    balanced: bool = True,
    split: Optional[str] = Split.TRAIN.value,
    prefix: Optional[str] = None,
) -> DatasetManifest:
    """``n`` records with consistent harm/target labels.

    ``balanced`` cycles the three harm classes; otherwise labels are drawn at
    roughly 60/30/10 harmless/partial/very. ``split=None`` draws an 80/10/10 split.
    """
    rng = np.random.default_rng(seed)
    prefix = prefix or name
    records = []
    for i in range(n):
        if balanced:
            harm = HarmLabel.from_ordinal(i % 3)
        else:
            harm = HarmLabel.from_ordinal(int(rng.choice(3, p=[0.6, 0.3, 0.1])))
        target = TargetLabel.from_ordinal(int(rng.integers(4))) if harm.is_harmful else None
        if split is None:
            s = Split.TRAIN if i % 10 < 8 else (Split.VALIDATION if i % 10 == 8 else Split.TEST)
        else:
            s = Split(split)
        records.append(
            MemeRecord(
                id=f"{prefix}-{i:04d}",
                image_ref=f"{prefix}/{i:04d}.png",
                ocr_text=f"text {int(rng.integers(1_000_000))}",
                harm=harm,
                target=target,
                split=s,
                source="synthetic",
                width=int(rng.integers(200, 800)),
                height=int(rng.integers(200, 800)),
            )
        )
    return DatasetManifest(name, tuple(records))
