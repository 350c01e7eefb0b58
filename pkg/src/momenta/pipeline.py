"""Filtering, near-duplicate removal and split assignment for meme collections."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .types import DatasetManifest, HarmLabel, MemeRecord, Split

logger = logging.getLogger(__name__)

DEFAULT_HAMMING_THRESHOLD = 4
HASH_ROWS, HASH_COLS = 8, 9


@dataclass(frozen=True)
class FilterFlags:
    is_english: bool
    text_readable: bool
    is_cartoon: bool
    has_image: bool
    has_text: bool

    def __post_init__(self) -> None:
        for f in fields(self):
            if not isinstance(getattr(self, f.name), bool):
                raise TypeError(f"filter flag {f.name!r} must be set to True or False")

    @classmethod
    def from_dict(cls, data: Mapping) -> "FilterFlags":
        names = [f.name for f in fields(cls)]
        missing = [n for n in names if n not in data]
        if missing:
            raise ValueError(f"filter flags missing: {missing}")
        return cls(**{n: data[n] for n in names})


@dataclass(frozen=True)
class Keep:
    pass


@dataclass(frozen=True)
class Reject:
    reason: str


FilterDecision = Union[Keep, Reject]


def filter_record(record: MemeRecord, flags: FilterFlags) -> FilterDecision:
    """Apply the collection criteria in their fixed order; the first failure wins."""
    if not flags.is_english:
        return Reject("non-english")
    if not flags.text_readable:
        return Reject("unreadable-text")
    if flags.is_cartoon:
        return Reject("cartoon")
    if not (flags.has_image and flags.has_text):
        return Reject("unimodal")
    return Keep()


REJECT_REASONS = ("non-english", "unreadable-text", "cartoon", "unimodal")


def read_flags(path: Union[str, Path]) -> dict[str, FilterFlags]:
    """Flags file: one JSON object per line with ``id`` plus the five flag fields."""
    out: dict[str, FilterFlags] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            data = json.loads(line)
            try:
                out[str(data.pop("id"))] = FilterFlags.from_dict(data)
            except (KeyError, ValueError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
    return out


def ingest(
    manifest: DatasetManifest, flags: Mapping[str, FilterFlags]
) -> tuple[DatasetManifest, dict[str, str]]:
    """Keep records passing every filter. Returns the kept manifest and ``id -> reason`` for rejects."""
    kept, rejected = [], {}
    for record in manifest.records:
        if record.id not in flags:
            raise KeyError(f"no filter flags for record {record.id!r}")
        decision = filter_record(record, flags[record.id])
        if isinstance(decision, Reject):
            rejected[record.id] = decision.reason
        else:
            kept.append(record)
    return manifest.replace_records(kept), rejected


# --- perceptual hashing -------------------------------------------------------


def _box_weights(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) matrix of fractional overlap between output and input cells, rows sum to 1."""
    edges = np.linspace(0.0, n_in, n_out + 1)
    lo = np.arange(n_in, dtype=np.float64)
    hi = lo + 1.0
    overlap = np.clip(np.minimum(edges[1:, None], hi[None, :]) - np.maximum(edges[:-1, None], lo[None, :]), 0.0, None)
    return overlap / overlap.sum(axis=1, keepdims=True)


def box_downscale(image: np.ndarray, rows: int, cols: int) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    return _box_weights(image.shape[0], rows) @ image @ _box_weights(image.shape[1], cols).T


def perceptual_hash(image: np.ndarray) -> int:
    """64-bit difference hash of a grayscale raster.

    The raster is box-averaged down to 8 rows by 9 columns; bit ``8*r + c`` is set
    when cell ``(r, c)`` is strictly brighter than its right neighbour.
    """
    image = np.asarray(image)
    if image.ndim == 3:
        image = image.mean(axis=2)
    if image.ndim != 2 or image.size == 0:
        raise ValueError("perceptual_hash needs a non-empty 2-D grayscale raster")
    # rounding absorbs float noise from the fractional box weights (flat regions must compare equal)
    small = np.round(box_downscale(image, HASH_ROWS, HASH_COLS), 6)
    bits = (small[:, :-1] > small[:, 1:]).ravel()
    value = 0
    for i, bit in enumerate(bits):
        if bit:
            value |= 1 << i
    return value


def hamming(a: int, b: int) -> int:
    return bin(a ^ b).count("1")


def load_grayscale(path: Union[str, Path]) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as img:
        return np.asarray(img.convert("L"), dtype=np.float64)


def hash_records(
    records: Sequence[MemeRecord],
    loader: Callable[[str], np.ndarray] = load_grayscale,
    threads: int = 1,
) -> dict[str, int]:
    def one(record: MemeRecord) -> int:
        return perceptual_hash(loader(record.image_ref))

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            values = list(pool.map(one, records))
    else:
        values = [one(r) for r in records]
    return {r.id: h for r, h in zip(records, values)}


# --- deduplication ------------------------------------------------------------


@dataclass(frozen=True)
class DedupGroup:
    member_ids: tuple[str, ...]
    kept_id: str

    def __post_init__(self) -> None:
        if self.kept_id not in self.member_ids:
            raise ValueError("kept_id must be a group member")


class _DisjointSet:
    def __init__(self, n: int) -> None:
        self.parent = list(range(n))

    def find(self, i: int) -> int:
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def dedup(
    records: Sequence[MemeRecord],
    hamming_threshold: int = DEFAULT_HAMMING_THRESHOLD,
    hashes: Optional[Mapping[str, int]] = None,
) -> list[DedupGroup]:
    """Group near-duplicates and pick the highest-resolution member of each group.

    Groups are connected components of the graph linking records whose hashes are
    within ``hamming_threshold`` bits. Ties on resolution go to the smallest id.
    Output is ordered by kept id, members sorted by id with the kept id first.
    """
    if hashes is None:
        hashes = hash_records(records)
    ordered = sorted(records, key=lambda r: r.id)
    values = [hashes[r.id] for r in ordered]
    ds = _DisjointSet(len(ordered))
    for i in range(len(ordered)):
        for j in range(i + 1, len(ordered)):
            if hamming(values[i], values[j]) <= hamming_threshold:
                ds.union(i, j)

    components: dict[int, list[MemeRecord]] = {}
    for i, record in enumerate(ordered):
        components.setdefault(ds.find(i), []).append(record)

    groups = []
    for members in components.values():
        best = min(members, key=lambda r: (-r.resolution, r.id))
        rest = sorted(r.id for r in members if r.id != best.id)
        groups.append(DedupGroup((best.id, *rest), best.id))
    groups.sort(key=lambda g: g.kept_id)
    return groups


def apply_dedup(manifest: DatasetManifest, groups: Iterable[DedupGroup]) -> DatasetManifest:
    kept = {g.kept_id for g in groups}
    return manifest.replace_records(r for r in manifest.records if r.id in kept)


def write_dedup_report(groups: Iterable[DedupGroup], path: Union[str, Path]) -> None:
    """One group per line, tab separated, kept id first."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for g in groups:
            fh.write("\t".join(g.member_ids) + "\n")


def read_dedup_report(path: Union[str, Path]) -> list[DedupGroup]:
    groups = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            ids = line.rstrip("\n").split("\t")
            if ids and ids[0]:
                groups.append(DedupGroup(tuple(ids), ids[0]))
    return groups


# --- splitting ----------------------------------------------------------------


def parse_ratios(text: str) -> tuple[float, float, float]:
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 3:
        raise ValueError(f"expected three comma-separated ratios, got {text!r}")
    return check_ratios(parts)


def check_ratios(ratios: Sequence[float]) -> tuple[float, float, float]:
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise ValueError(f"ratios must be three non-negative numbers, got {tuple(ratios)}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {sum(ratios)!r}")
    return tuple(float(r) for r in ratios)  # type: ignore[return-value]


def split_dataset(
    records: Sequence[MemeRecord],
    ratios: Sequence[float],
    seed: int,
    name: str = "dataset",
) -> DatasetManifest:
    """Stratified split by harm label.

    Each class is sorted by id, shuffled with a generator keyed on ``(seed, class)``,
    then cut into ``floor(ratio * count)`` validation and test records; the remainder
    goes to train. Output keeps the input order (canonicalised by id).
    """
    train_r, val_r, test_r = check_ratios(ratios)
    assignment: dict[str, Split] = {}
    for label in HarmLabel:
        members = sorted((r for r in records if r.harm is label), key=lambda r: r.id)
        if not members:
            continue
        rng = np.random.default_rng([seed, label.ordinal])
        order = rng.permutation(len(members))
        n_val = int(np.floor(val_r * len(members) + 1e-9))
        n_test = int(np.floor(test_r * len(members) + 1e-9))
        for rank, idx in enumerate(order):
            if rank < n_val:
                split = Split.VALIDATION
            elif rank < n_val + n_test:
                split = Split.TEST
            else:
                split = Split.TRAIN
            assignment[members[idx].id] = split
    out = [replace(r, split=assignment[r.id]) for r in sorted(records, key=lambda r: r.id)]
    return DatasetManifest(name, tuple(out))
