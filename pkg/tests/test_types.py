import itertools
from dataclasses import replace

import pytest
from hypothesis import given, strategies as st

from momenta.synthetic import random_corpus
from momenta.types import (
    BinaryHarm,
    DatasetManifest,
    HarmLabel,
    MemeRecord,
    Split,
    TargetLabel,
    concat_manifests,
    merge_to_binary,
    ordinal_index,
    read_manifest,
    validate_record,
    write_manifest,
)


def rec(id="m1", harm=HarmLabel.HARMLESS, target=None, **kw):
    return MemeRecord(id=id, image_ref=f"{id}.png", ocr_text="txt", harm=harm, target=target, **kw)


def test_ordinals():
    assert ordinal_index(HarmLabel.HARMLESS) == 0
    assert ordinal_index(HarmLabel.PARTIALLY_HARMFUL) == 1
    assert ordinal_index(HarmLabel.VERY_HARMFUL) == 2
    assert [ordinal_index(t) for t in TargetLabel] == [0, 1, 2, 3]
    assert ordinal_index(TargetLabel.SOCIETY) == 3
    assert len({h.ordinal for h in HarmLabel}) == 3
    for h in HarmLabel:
        assert HarmLabel.from_ordinal(h.ordinal) is h


def test_society_ordering_reproduces_majority_mmae():
    # Among all orderings putting the majority target (individual) first, the
    # constant-0 prediction has MMAE = mean(0, 1, 2, 3) = 1.5 for every ordering.
    for perm in itertools.permutations(range(1, 4)):
        order = (0,) + perm
        assert sum(abs(0 - o) for o in order) / 4 == 1.5
    # and the declared ordering is one of them
    assert TargetLabel.INDIVIDUAL.ordinal == 0


def test_merge_to_binary():
    assert merge_to_binary(HarmLabel.HARMLESS) is BinaryHarm.HARMLESS
    assert merge_to_binary(HarmLabel.PARTIALLY_HARMFUL) is BinaryHarm.HARMFUL
    assert merge_to_binary(HarmLabel.VERY_HARMFUL) is BinaryHarm.HARMFUL
    assert {merge_to_binary(h) for h in HarmLabel} <= set(BinaryHarm)


def test_validate_examples():
    assert validate_record(rec()).ok
    assert validate_record(rec(harm=HarmLabel.VERY_HARMFUL, target=TargetLabel.INDIVIDUAL)).ok
    r = validate_record(rec(target=TargetLabel.SOCIETY))
    assert not r.ok and "target on harmless" in r.violations
    assert "missing target on harmful" in validate_record(rec(harm=HarmLabel.PARTIALLY_HARMFUL)).violations
    assert "empty id" in validate_record(rec(id="")).violations
    assert "non-positive dimensions" in validate_record(rec(width=0)).violations


@given(st.integers(0, 10_000))
def test_well_formed_corpus_validates_and_corruption_is_caught(seed):
    corpus = random_corpus(12, seed, balanced=False, split=None)
    for r in corpus:
        assert validate_record(r).ok
        if r.harm.is_harmful:
            assert not validate_record(replace(r, target=None)).ok
            assert not validate_record(replace(r, harm=HarmLabel.HARMLESS)).ok
        else:
            assert not validate_record(replace(r, target=TargetLabel.COMMUNITY)).ok
            assert not validate_record(replace(r, harm=HarmLabel.VERY_HARMFUL)).ok


def test_record_roundtrip_and_unknown_fields():
    r = rec(harm=HarmLabel.VERY_HARMFUL, target=TargetLabel.ORGANIZATION, split=Split.TEST, width=3, height=4)
    assert MemeRecord.from_dict(r.to_dict()) == r
    assert r.resolution == 12
    with pytest.raises(ValueError):
        MemeRecord.from_dict({**r.to_dict(), "extra": 1})


def test_manifest_io(tmp_path):
    m = random_corpus(20, 3, name="io", split=None)
    path = tmp_path / "m.jsonl"
    write_manifest(m, path)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("#") and len(lines) == 21
    back = read_manifest(path)
    assert back == m
    assert sum(back.split_counts().values()) == 20


def test_manifest_rejects_duplicates_and_newer_schema(tmp_path):
    with pytest.raises(ValueError):
        DatasetManifest("d", (rec("a"), rec("a")))
    path = tmp_path / "m.jsonl"
    path.write_text('#{"name": "x", "schema_version": 99}\n')
    with pytest.raises(ValueError):
        read_manifest(path)


def test_concat():
    a = random_corpus(5, 0, name="a", prefix="a")
    b = random_corpus(5, 0, name="b", prefix="b")
    c = concat_manifests([a, b])
    assert len(c) == 10 and c.name == "combined"
