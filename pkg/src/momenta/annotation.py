"""Consolidation of three-way annotations and Cohen's kappa agreement."""

from __future__ import annotations

import csv
import itertools
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Hashable, Iterable, Optional, Sequence, Union

from .types import HarmLabel, TargetLabel

PANEL_SIZE = 3
ANNOTATION_COLUMNS = ("meme_id", "annotator_id", "harm", "target")


class ProtocolError(ValueError):
    """Annotation input does not follow the three-annotator protocol."""


class Task(str, Enum):
    HARM = "harm"
    TARGET = "target"


class Method(str, Enum):
    UNANIMOUS = "unanimous"
    MAJORITY = "majority"
    CONSOLIDATOR = "consolidator"


@dataclass(frozen=True)
class Annotation:
    annotator_id: str
    harm: HarmLabel
    target: Optional[TargetLabel] = None


@dataclass(frozen=True)
class AnnotationSet:
    meme_id: str
    labels: tuple[Annotation, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "labels", tuple(self.labels))
        if not self.labels:
            raise ProtocolError(f"{self.meme_id}: no annotations")
        ids = [a.annotator_id for a in self.labels]
        if len(set(ids)) != len(ids):
            raise ProtocolError(f"{self.meme_id}: duplicate annotator ids {ids}")

    def annotator_ids(self) -> tuple[str, ...]:
        return tuple(a.annotator_id for a in self.labels)

    def label_for(self, annotator_id: str, task: Task) -> Optional[Hashable]:
        for a in self.labels:
            if a.annotator_id == annotator_id:
                return a.harm if task is Task.HARM else a.target
        raise KeyError(annotator_id)


@dataclass(frozen=True)
class Decision:
    """Outcome for one task on one meme. ``label`` is None when escalated."""

    label: Optional[Hashable]
    method: Method

    @property
    def escalated(self) -> bool:
        return self.method is Method.CONSOLIDATOR


@dataclass(frozen=True)
class ConsolidationResult:
    meme_id: str
    harm: Decision
    target: Optional[Decision]

    @property
    def escalated(self) -> bool:
        return self.harm.escalated or (self.target is not None and self.target.escalated)


def vote(labels: Sequence[Hashable]) -> Decision:
    """Strict-majority vote; no strict majority means escalation."""
    if not labels:
        raise ProtocolError("cannot vote over zero labels")
    counts = Counter(labels)
    label, top = max(counts.items(), key=lambda kv: kv[1])
    if top == len(labels):
        return Decision(label, Method.UNANIMOUS)
    if 2 * top > len(labels):
        return Decision(label, Method.MAJORITY)
    return Decision(None, Method.CONSOLIDATOR)


def consolidate(annotations: AnnotationSet) -> ConsolidationResult:
    """Resolve the harm label, then the target among annotators who marked the meme harmful.

    The target decision is only made when the consolidated harm label is harmful.
    """
    if len(annotations.labels) != PANEL_SIZE:
        raise ProtocolError(
            f"{annotations.meme_id}: expected {PANEL_SIZE} annotations, got {len(annotations.labels)}"
        )
    harm = vote([a.harm for a in annotations.labels])
    target = None
    if harm.label is not None and harm.label.is_harmful:
        votes = [a.target for a in annotations.labels if a.harm.is_harmful and a.target is not None]
        target = vote(votes) if votes else Decision(None, Method.CONSOLIDATOR)
    return ConsolidationResult(annotations.meme_id, harm, target)


def cohen_kappa(a: Sequence[Hashable], b: Sequence[Hashable]) -> float:
    """Cohen's kappa between two raters.

    When chance agreement is 1 (both raters used one identical label throughout)
    the value is 1.0 for identical sequences and 0.0 otherwise.
    """
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} vs {len(b)}")
    n = len(a)
    if n == 0:
        raise ValueError("kappa needs at least one item")
    p_o = sum(x == y for x, y in zip(a, b)) / n
    ca, cb = Counter(a), Counter(b)
    p_e = sum(ca[k] * cb[k] for k in ca) / (n * n)
    if p_e >= 1.0:
        return 1.0 if list(a) == list(b) else 0.0
    return (p_o - p_e) / (1.0 - p_e)


def average_pairwise_kappa(sets: Iterable[AnnotationSet], task: Union[Task, str]) -> float:
    """Mean kappa over every annotator pair that labelled at least one common meme.

    For the target task a meme counts towards a pair only if both annotators gave a target.
    """
    task = Task(task)
    paired: dict[tuple[str, str], tuple[list, list]] = {}
    for s in sets:
        for x, y in itertools.combinations(sorted(s.annotator_ids()), 2):
            lx, ly = s.label_for(x, task), s.label_for(y, task)
            if lx is None or ly is None:
                continue
            seq = paired.setdefault((x, y), ([], []))
            seq[0].append(lx)
            seq[1].append(ly)
    if not paired:
        raise ValueError("no annotator pair shares a meme")
    kappas = [cohen_kappa(xs, ys) for xs, ys in paired.values()]
    return sum(kappas) / len(kappas)


# --- files --------------------------------------------------------------------


def read_annotations(path: Union[str, Path]) -> list[AnnotationSet]:
    """Tab-separated file with header ``meme_id annotator_id harm target``; empty target allowed."""
    grouped: dict[str, list[Annotation]] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh, delimiter="\t")
        if reader.fieldnames is None or tuple(reader.fieldnames) != ANNOTATION_COLUMNS:
            raise ProtocolError(f"{path}: header must be {' '.join(ANNOTATION_COLUMNS)}")
        for row in reader:
            target = row["target"].strip()
            grouped.setdefault(row["meme_id"], []).append(
                Annotation(row["annotator_id"], HarmLabel(row["harm"].strip()), TargetLabel(target) if target else None)
            )
    return [AnnotationSet(mid, tuple(labels)) for mid, labels in grouped.items()]


def write_annotations(sets: Iterable[AnnotationSet], path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(ANNOTATION_COLUMNS)
        for s in sets:
            for a in s.labels:
                writer.writerow([s.meme_id, a.annotator_id, a.harm.value, a.target.value if a.target else ""])


def write_decisions(results: Iterable[ConsolidationResult], decided: Union[str, Path], escalations: Union[str, Path]) -> tuple[int, int]:
    """Decided rows go to ``decided``; anything needing a consolidator goes to the queue file."""
    n_dec = n_esc = 0
    with open(decided, "w", encoding="utf-8", newline="") as fd, open(escalations, "w", encoding="utf-8", newline="") as fe:
        wd = csv.writer(fd, delimiter="\t", lineterminator="\n")
        we = csv.writer(fe, delimiter="\t", lineterminator="\n")
        wd.writerow(("meme_id", "harm", "harm_method", "target", "target_method"))
        we.writerow(("meme_id", "open_tasks"))
        for r in results:
            if r.escalated:
                open_tasks = ["harm"] if r.harm.escalated else []
                if r.harm.escalated or (r.target is not None and r.target.escalated):
                    open_tasks.append("target")
                we.writerow((r.meme_id, ",".join(open_tasks)))
                n_esc += 1
                continue
            wd.writerow((
                r.meme_id,
                r.harm.label.value,
                r.harm.method.value,
                r.target.label.value if r.target else "",
                r.target.method.value if r.target else "",
            ))
            n_dec += 1
    return n_dec, n_esc
