import json
import subprocess
import sys

import numpy as np
import pytest
from PIL import Image

from momenta.annotation import Annotation, AnnotationSet, write_annotations
from momenta.cli import main
from momenta.synthetic import random_corpus
from momenta.types import HarmLabel as H, TargetLabel as T, write_manifest


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert "schema_version 1" in capsys.readouterr().out


def test_unknown_command(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_eval_missing_checkpoint(capsys):
    code, _, err = run(capsys, "eval", "--ckpt", "missing")
    assert code == 1
    assert err.strip().startswith("error: checkpoint-not-found:") and err.count("\n") == 1


def test_split_bad_ratios(capsys):
    code, _, err = run(capsys, "split", "--ratios", "0.5,0.5,0.5")
    assert code == 3 and "config-invalid" in err


def test_bad_config_exit_3(capsys, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text('{"nonsense": true}')
    m = tmp_path / "m.jsonl"
    write_manifest(random_corpus(5, 0), m)
    code, _, err = run(capsys, "split", "--manifest", m, "--out", tmp_path / "o.jsonl", "--config", cfg)
    assert code == 3 and err.startswith("error: config-invalid:")


def test_missing_manifest(capsys, tmp_path):
    code, _, err = run(capsys, "split", "--manifest", tmp_path / "nope.jsonl", "--out", tmp_path / "o.jsonl")
    assert code == 1 and "manifest-not-found" in err


def _write_images(root, n):
    """Smooth random images; every third one is a downscaled copy of its predecessor."""
    rng = np.random.default_rng(0)
    records = random_corpus(n, 1, name="raw", split=None).records
    from dataclasses import replace

    out = []
    for i, r in enumerate(records):
        if i % 3 == 2:
            src = Image.open(root / out[-1].image_ref)
            img = src.resize((src.width // 2, src.height // 2), Image.BILINEAR)
        else:
            coarse = (rng.random((5, 5)) * 255).astype(np.uint8)
            img = Image.fromarray(coarse).resize((120, 90), Image.BILINEAR)
        name = f"img{i:03d}.png"
        img.save(root / name)
        out.append(replace(r, image_ref=name, width=img.width, height=img.height))
    return out


def test_full_pipeline(capsys, tmp_path, monkeypatch):
    from momenta.types import DatasetManifest

    monkeypatch.setenv("MOMENTA_CACHE_DIR", str(tmp_path / "cachedir"))
    (tmp_path / "cachedir").mkdir()
    records = _write_images(tmp_path, 30)
    raw = tmp_path / "raw.jsonl"
    write_manifest(DatasetManifest("raw", tuple(records)), raw)

    flags = tmp_path / "flags.jsonl"
    with open(flags, "w") as fh:
        for i, r in enumerate(records):
            fl = dict(is_english=i != 0, text_readable=True, is_cartoon=False, has_image=True, has_text=True)
            fh.write(json.dumps({"id": r.id, **fl}) + "\n")
    code, out, _ = run(capsys, "ingest", "--manifest", raw, "--flags", flags, "--out", tmp_path / "kept.jsonl",
                       "--rejects", tmp_path / "rejects.tsv")
    assert code == 0 and json.loads(out)["kept"] == 29
    # images live next to raw.jsonl, so keep the ingested manifest there as well
    code, out, _ = run(capsys, "dedup", "--manifest", tmp_path / "kept.jsonl", "--threshold", 4,
                       "--report", tmp_path / "groups.tsv", "--out", tmp_path / "dedup.jsonl")
    assert code == 0
    assert json.loads(out)["duplicates_removed"] >= 9
    code, out, _ = run(capsys, "split", "--manifest", tmp_path / "dedup.jsonl", "--ratios", "0.6,0.2,0.2",
                       "--seed", 1, "--out", tmp_path / "split.jsonl")
    assert code == 0
    first = (tmp_path / "split.jsonl").read_bytes()
    run(capsys, "split", "--manifest", tmp_path / "dedup.jsonl", "--ratios", "0.6,0.2,0.2", "--seed", 1,
        "--out", tmp_path / "split.jsonl")
    assert (tmp_path / "split.jsonl").read_bytes() == first

    code, out, _ = run(capsys, "encode", "--manifest", tmp_path / "split.jsonl")
    assert code == 0 and (tmp_path / "cachedir" / "embeddings.cache").exists()
    ckpt = tmp_path / "model.ckpt"
    code, _, _ = run(capsys, "train", "--manifest", tmp_path / "split.jsonl", "--out", ckpt, "--epochs", 3)
    assert code == 0
    for suffix in (".meta.json", ".history.json", ".history.png", ".config.json"):
        assert (tmp_path / f"model.ckpt{suffix}").exists(), suffix
    report = tmp_path / "eval" / "harm3.json"
    code, out, _ = run(capsys, "eval", "--ckpt", ckpt, "--manifest", tmp_path / "split.jsonl", "--task", "harm3",
                       "--report", report, "--split", "")
    assert code == 0
    data = json.loads(report.read_text())
    assert {"accuracy", "macro_f1", "mmae", "per_class_f1", "confusion"} <= set(data)
    assert report.with_suffix(".tsv").exists() and report.with_suffix(".png").exists()
    assert (report.parent / "harm3.json.config.json").exists()

    code, out, _ = run(capsys, "baseline", "--train", tmp_path / "split.jsonl", "--test", tmp_path / "split.jsonl",
                       "--task", "harm2")
    assert code == 0 and json.loads(out)["mmae"] in (0.5, 0.0)


def test_annotation_commands(capsys, tmp_path):
    sets = [
        AnnotationSet("m1", (Annotation("a", H.HARMLESS), Annotation("b", H.HARMLESS), Annotation("c", H.HARMLESS))),
        AnnotationSet("m2", (Annotation("a", H.HARMLESS), Annotation("b", H.VERY_HARMFUL, T.SOCIETY),
                             Annotation("c", H.PARTIALLY_HARMFUL, T.SOCIETY))),
    ]
    path = tmp_path / "ann.tsv"
    write_annotations(sets, path)
    code, out, _ = run(capsys, "consolidate", "--annotations", path, "--decided", tmp_path / "d.tsv",
                       "--escalations", tmp_path / "q.tsv")
    assert code == 0 and json.loads(out) == {"decided": 1, "escalated": 1}
    code, out, _ = run(capsys, "kappa", "--annotations", path, "--task", "harm")
    assert code == 0 and -1 <= json.loads(out)["kappa"] <= 1


def test_transfer_command(capsys, tmp_path):
    from momenta.encoders import EmbeddingCache, SyntheticBackend, encode_manifest

    paths = []
    cache = EmbeddingCache(tmp_path / "e.cache", "a")
    for name, seed in (("A", 1), ("B", 2)):
        m = random_corpus(20, seed, name=name, prefix=name, split=None)
        encode_manifest(m.records, SyntheticBackend(), cache)
        write_manifest(m, tmp_path / f"{name}.jsonl")
        paths.append(str(tmp_path / f"{name}.jsonl"))
    code, out, _ = run(capsys, "transfer", "--manifests", ",".join(paths), "--cache", tmp_path / "e.cache",
                       "--epochs", 1, "--out", tmp_path / "tr", "--no-combined")
    assert code == 0
    data = json.loads((tmp_path / "tr" / "transfer.json").read_text())
    assert data["rows"] == ["A", "B"]
    assert (tmp_path / "tr" / "transfer.png").exists() and (tmp_path / "tr" / "resolved-config.json").exists()


def test_missing_embeddings_class(capsys, tmp_path):
    m = tmp_path / "m.jsonl"
    write_manifest(random_corpus(6, 0, split=None), m)
    from momenta.encoders import EmbeddingCache

    EmbeddingCache(tmp_path / "empty.cache", "a")
    code, _, err = run(capsys, "train", "--manifest", m, "--cache", tmp_path / "empty.cache", "--epochs", 1,
                       "--out", tmp_path / "x.ckpt")
    assert code == 1 and err.startswith("error: missing-embeddings:")


def test_demo_byte_identical(capsys, tmp_path):
    for d in ("a", "b"):
        code, _, _ = run(capsys, "demo", "--out", tmp_path / d, "--epochs", 3)
        assert code == 0
    for name in ("report.json", "history.png", "confusion-harm3.png"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "momenta", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and "momenta" in out.stdout
