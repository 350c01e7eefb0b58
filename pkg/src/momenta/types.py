"""Label taxonomy and the meme record data model shared across the package."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Optional, Union

SCHEMA_VERSION = 1

RECORD_FIELDS = ("id", "image_ref", "ocr_text", "harm", "target", "split", "source", "width", "height")


class HarmLabel(str, Enum):
    HARMLESS = "harmless"
    PARTIALLY_HARMFUL = "partially_harmful"
    VERY_HARMFUL = "very_harmful"

    @property
    def ordinal(self) -> int:
        return _HARM_ORDER.index(self)

    @classmethod
    def from_ordinal(cls, index: int) -> "HarmLabel":
        return _HARM_ORDER[index]

    @property
    def is_harmful(self) -> bool:
        return self is not HarmLabel.HARMLESS


class TargetLabel(str, Enum):
    INDIVIDUAL = "individual"
    ORGANIZATION = "organization"
    COMMUNITY = "community"
    SOCIETY = "society"

    @property
    def ordinal(self) -> int:
        return _TARGET_ORDER.index(self)

    @classmethod
    def from_ordinal(cls, index: int) -> "TargetLabel":
        return _TARGET_ORDER[index]


class BinaryHarm(str, Enum):
    HARMLESS = "harmless"
    HARMFUL = "harmful"

    @property
    def ordinal(self) -> int:
        return 0 if self is BinaryHarm.HARMLESS else 1


class Split(str, Enum):
    TRAIN = "train"
    VALIDATION = "validation"
    TEST = "test"


_HARM_ORDER = (HarmLabel.HARMLESS, HarmLabel.PARTIALLY_HARMFUL, HarmLabel.VERY_HARMFUL)
_TARGET_ORDER = (
    TargetLabel.INDIVIDUAL,
    TargetLabel.ORGANIZATION,
    TargetLabel.COMMUNITY,
    TargetLabel.SOCIETY,
)

NUM_HARM_CLASSES = len(_HARM_ORDER)
NUM_TARGET_CLASSES = len(_TARGET_ORDER)


def ordinal_index(label: Union[HarmLabel, TargetLabel, BinaryHarm]) -> int:
    """Position of ``label`` on its ordinal scale (used by MMAE)."""
    return label.ordinal


def merge_to_binary(label: HarmLabel) -> BinaryHarm:
    """Collapse partially/very harmful into a single harmful class."""
    return BinaryHarm.HARMFUL if label.is_harmful else BinaryHarm.HARMLESS


@dataclass(frozen=True)
class MemeRecord:
    id: str
    image_ref: str
    ocr_text: str
    harm: HarmLabel
    target: Optional[TargetLabel] = None
    split: Split = Split.TRAIN
    source: str = ""
    width: int = 1
    height: int = 1

    @property
    def resolution(self) -> int:
        return self.width * self.height

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "image_ref": self.image_ref,
            "ocr_text": self.ocr_text,
            "harm": self.harm.value,
            "target": self.target.value if self.target is not None else None,
            "split": self.split.value,
            "source": self.source,
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MemeRecord":
        unknown = set(data) - set(RECORD_FIELDS)
        if unknown:
            raise ValueError(f"unknown record fields: {sorted(unknown)}")
        target = data.get("target")
        return cls(
            id=str(data["id"]),
            image_ref=str(data.get("image_ref", "")),
            ocr_text=str(data.get("ocr_text", "")),
            harm=HarmLabel(data["harm"]),
            target=TargetLabel(target) if target is not None else None,
            split=Split(data.get("split", "train")),
            source=str(data.get("source", "")),
            width=int(data.get("width", 1)),
            height=int(data.get("height", 1)),
        )


@dataclass(frozen=True)
class ValidationResult:
    violations: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def validate_record(record: MemeRecord) -> ValidationResult:
    violations = []
    if not record.id:
        violations.append("empty id")
    if record.harm.is_harmful and record.target is None:
        violations.append("missing target on harmful")
    if not record.harm.is_harmful and record.target is not None:
        violations.append("target on harmless")
    if record.width <= 0 or record.height <= 0:
        violations.append("non-positive dimensions")
    return ValidationResult(tuple(violations))


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    records: tuple[MemeRecord, ...] = field(default_factory=tuple)
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self) -> None:
        object.__setattr__(self, "records", tuple(self.records))
        counts = Counter(r.id for r in self.records)
        dupes = sorted(i for i, c in counts.items() if c > 1)
        if dupes:
            raise ValueError(f"duplicate record ids in manifest {self.name!r}: {dupes[:5]}")

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[MemeRecord]:
        return iter(self.records)

    def by_split(self, split: Union[Split, str]) -> list[MemeRecord]:
        split = Split(split)
        return [r for r in self.records if r.split is split]

    def split_counts(self) -> dict[str, int]:
        counts = Counter(r.split.value for r in self.records)
        return {s.value: counts.get(s.value, 0) for s in Split}

    def ids(self) -> list[str]:
        return [r.id for r in self.records]

    def replace_records(self, records: Iterable[MemeRecord], name: Optional[str] = None) -> "DatasetManifest":
        return DatasetManifest(name or self.name, tuple(records), self.schema_version)


def concat_manifests(manifests: Iterable[DatasetManifest], name: str = "combined") -> DatasetManifest:
    records: list[MemeRecord] = []
    for m in manifests:
        records.extend(m.records)
    return DatasetManifest(name, tuple(records))


def write_manifest(manifest: DatasetManifest, path: Union[str, Path]) -> None:
    """Write one JSON object per line, preceded by a ``#``-prefixed header line."""
    header = {"name": manifest.name, "schema_version": manifest.schema_version}
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("#" + json.dumps(header, sort_keys=True) + "\n")
        for record in manifest.records:
            fh.write(json.dumps(record.to_dict(), ensure_ascii=False) + "\n")


def read_manifest(path: Union[str, Path]) -> DatasetManifest:
    path = Path(path)
    name = path.stem
    schema_version = SCHEMA_VERSION
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                header = json.loads(line[1:])
                name = header.get("name", name)
                schema_version = int(header.get("schema_version", SCHEMA_VERSION))
                if schema_version > SCHEMA_VERSION:
                    raise ValueError(f"{path}: schema_version {schema_version} is newer than supported {SCHEMA_VERSION}")
                continue
            try:
                records.append(MemeRecord.from_dict(json.loads(line)))
            except (KeyError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad record: {exc}") from exc
    return DatasetManifest(name, tuple(records), schema_version)


__all__ = [
    "BinaryHarm",
    "DatasetManifest",
    "HarmLabel",
    "MemeRecord",
    "NUM_HARM_CLASSES",
    "NUM_TARGET_CLASSES",
    "RECORD_FIELDS",
    "SCHEMA_VERSION",
    "Split",
    "TargetLabel",
    "ValidationResult",
    "concat_manifests",
    "merge_to_binary",
    "ordinal_index",
    "read_manifest",
    "validate_record",
    "write_manifest",
]
