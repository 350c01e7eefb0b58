"""``momenta`` command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 usage error / unknown command,
3 configuration error. Failures print one line to stderr::

    error: <error-class>: <message>
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .types import SCHEMA_VERSION

logger = logging.getLogger("momenta")


class CLIError(Exception):
    def __init__(self, error_class: str, message: str, code: int = 1) -> None:
        super().__init__(message)
        self.error_class = error_class
        self.code = code


def _dump(obj, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _resolved(args, overrides: Optional[dict] = None) -> dict:
    from .config import resolve

    over = overrides or {}
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    if args.threads is not None:
        over["threads"] = args.threads
    return resolve(getattr(args, "config", None), over)


def _apply_threads(resolved: dict) -> None:
    from .training import set_threads

    set_threads(resolved["threads"])


def _need(args, *names: str) -> None:
    missing = ["--" + n.replace("_", "-") for n in names if getattr(args, n) in (None, "")]
    if missing:
        raise CLIError("usage", f"{args.command} needs {', '.join(missing)}", code=2)


def _read_manifest(path: str):
    from .types import read_manifest

    if not Path(path).exists():
        raise CLIError("manifest-not-found", f"manifest not found: {path}")
    return read_manifest(path)


def _open_cache(path: Path, mode: str):
    from .encoders import EmbeddingCache

    if mode == "r" and not path.exists():
        raise CLIError("cache-not-found", f"embedding cache not found: {path}")
    return EmbeddingCache(path, mode)


def write_report(report, path: Path) -> None:
    """JSON report at ``path``, per-class TSV and confusion-matrix PNG beside it."""
    from .figures import confusion_figure

    _dump(report.to_dict(), path)
    rows = ["class\tsupport\tf1"]
    for name, support, f1 in zip(report.class_names, report.support, report.to_dict()["per_class_f1"]):
        rows.append(f"{name}\t{support}\t{'' if f1 is None else f'{f1:.6f}'}")
    path.with_suffix(".tsv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    confusion_figure(report, path.with_suffix(".png"))


# --- commands -----------------------------------------------------------------


def cmd_ingest(args) -> int:
    from .pipeline import REJECT_REASONS, ingest, read_flags
    from .types import write_manifest

    manifest = _read_manifest(args.manifest)
    kept, rejected = ingest(manifest, read_flags(args.flags))
    out = Path(args.out)
    write_manifest(kept, out)
    summary = {"kept": len(kept), "rejected": {r: sum(v == r for v in rejected.values()) for r in REJECT_REASONS}}
    if args.rejects:
        Path(args.rejects).write_text("".join(f"{i}\t{r}\n" for i, r in sorted(rejected.items())), encoding="utf-8")
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_dedup(args) -> int:
    from .pipeline import apply_dedup, dedup, hash_records, load_grayscale, write_dedup_report
    from .types import write_manifest

    resolved = _resolved(args, {"pipeline": {"hamming_threshold": args.threshold}} if args.threshold is not None else None)
    manifest = _read_manifest(args.manifest)
    base = Path(args.manifest).parent

    def loader(ref: str):
        p = Path(ref)
        return load_grayscale(p if p.is_absolute() else base / p)

    hashes = hash_records(manifest.records, loader, threads=resolved["threads"])
    groups = dedup(manifest.records, resolved["pipeline"]["hamming_threshold"], hashes)
    write_dedup_report(groups, Path(args.report))
    write_manifest(apply_dedup(manifest, groups), Path(args.out))
    print(json.dumps({"groups": len(groups), "duplicates_removed": len(manifest) - len(groups)}))
    return 0


def cmd_split(args) -> int:
    from .config import ConfigError
    from .pipeline import parse_ratios, split_dataset
    from .types import write_manifest

    try:
        ratios = parse_ratios(args.ratios) if args.ratios else None
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    resolved = _resolved(args, {"pipeline": {"ratios": list(ratios)}} if ratios else None)
    _need(args, "manifest", "out")
    manifest = _read_manifest(args.manifest)
    try:
        out = split_dataset(manifest.records, resolved["pipeline"]["ratios"], resolved["seed"], name=manifest.name)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    write_manifest(out, Path(args.out))
    print(json.dumps(out.split_counts(), sort_keys=True))
    return 0


def cmd_consolidate(args) -> int:
    from .annotation import consolidate, read_annotations, write_decisions

    results = [consolidate(s) for s in read_annotations(args.annotations)]
    decided, escalated = write_decisions(results, args.decided, args.escalations)
    print(json.dumps({"decided": decided, "escalated": escalated}))
    return 0


def cmd_kappa(args) -> int:
    from .annotation import average_pairwise_kappa, read_annotations

    value = average_pairwise_kappa(read_annotations(args.annotations), args.task)
    print(json.dumps({"task": args.task, "kappa": round(value, 6)}))
    return 0


def cmd_encode(args) -> int:
    from .encoders import SyntheticBackend, encode_manifest, load_backend

    overrides = {"encoder": {"backend": args.backend if args.backend != "external" else (args.backend_factory or "")}}
    resolved = _resolved(args, overrides)
    enc = resolved["encoder"]
    if args.backend == "external" and not args.backend_factory:
        from .config import ConfigError

        raise ConfigError("--backend external needs --backend-factory module:callable")
    backend = (
        SyntheticBackend(enc["n_proposals"], enc["n_attributes"]) if enc["backend"] == "synthetic" else load_backend(enc["backend"])
    )
    from .config import cache_path, write_snapshot

    path = cache_path(resolved, args.cache)
    manifest = _read_manifest(args.manifest)
    cache = _open_cache(path, "a")
    added = encode_manifest(manifest.records, backend, cache, threads=resolved["threads"])
    write_snapshot(resolved, path)
    print(json.dumps({"encoded": added, "cached": len(cache)}))
    return 0


def _train_overrides(args) -> dict:
    over: dict = {}
    if getattr(args, "variant", None):
        over.setdefault("model", {})["variant"] = args.variant
    if getattr(args, "c_harm", None):
        over.setdefault("model", {})["c_harm"] = args.c_harm
    if getattr(args, "epochs", None):
        over.setdefault("training", {})["epochs"] = args.epochs
    if getattr(args, "lambda_target", None) is not None:
        over.setdefault("training", {})["lambda_target"] = args.lambda_target
    return over


def cmd_train(args) -> int:
    from .config import cache_path, train_config, write_snapshot
    from .figures import history_figure
    from .model import save_checkpoint
    from .training import train

    resolved = _resolved(args, _train_overrides(args))
    _apply_threads(resolved)
    config = train_config(resolved)
    manifest = _read_manifest(args.manifest)
    cache = _open_cache(cache_path(resolved, args.cache), "r")
    model, history = train(manifest, cache, config)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, out, seed=config.seed)
    _dump(history, out.with_name(out.name + ".history.json"))
    history_figure(history, out.with_name(out.name + ".history.png"))
    write_snapshot(resolved, out)
    print(json.dumps(history[-1], sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    from .config import cache_path, write_snapshot
    from .evaluation import evaluate
    from .model import load_checkpoint

    resolved = _resolved(args)
    _apply_threads(resolved)
    try:
        model = load_checkpoint(args.ckpt)
    except FileNotFoundError as exc:
        raise CLIError("checkpoint-not-found", str(exc)) from None
    _need(args, "manifest", "task", "report")
    manifest = _read_manifest(args.manifest)
    cache = _open_cache(cache_path(resolved, args.cache), "r")
    report = evaluate(model, manifest, cache, args.task, split=args.split or None)
    out = Path(args.report)
    write_report(report, out)
    write_snapshot(resolved, out)
    print(json.dumps({k: v for k, v in report.to_dict().items() if k in ("task", "accuracy", "macro_f1", "mmae")}, sort_keys=True))
    return 0


def cmd_transfer(args) -> int:
    from .config import cache_path, train_config, write_snapshot
    from .evaluation import transfer_matrix
    from .figures import transfer_figure

    resolved = _resolved(args, _train_overrides(args))
    _apply_threads(resolved)
    manifests = [_read_manifest(p) for p in args.manifests.split(",")]
    cache = _open_cache(cache_path(resolved, args.cache), "r")
    table = transfer_matrix(manifests, cache, train_config(resolved), combined=not args.no_combined)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = table.to_dict()
    _dump(data, out / "transfer.json")
    lines = ["train\ttest\t" + "\t".join(data["tasks"])]
    for r in data["rows"]:
        for c in data["columns"]:
            lines.append(f"{r}\t{c}\t" + "\t".join(f"{data['macro_f1'][r][c][t]:.6f}" for t in data["tasks"]))
    (out / "transfer.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    transfer_figure(data, out / "transfer.png")
    write_snapshot(resolved, out)
    print(json.dumps(data["macro_f1"], sort_keys=True))
    return 0


def cmd_baseline(args) -> int:
    from .evaluation import majority_baseline

    report = majority_baseline(_read_manifest(args.train), _read_manifest(args.test), args.task)
    if args.report:
        write_report(report, Path(args.report))
    print(json.dumps(report.to_dict(), sort_keys=True))
    return 0


def run_demo(out: Path, seed: int = 0, n: int = 60, epochs: int = 20, threads: int = 1) -> Path:
    """Synthetic end-to-end run: corpus, encode, train, evaluate. Returns the report path."""
    from .config import resolve, train_config, write_snapshot
    from .encoders import EmbeddingCache, SyntheticBackend, encode_manifest
    from .evaluation import EvalTask, evaluate, majority_baseline
    from .figures import confusion_figure, history_figure
    from .model import save_checkpoint
    from .synthetic import random_corpus
    from .training import set_threads, train
    from .types import write_manifest

    resolved = resolve(None, {"seed": seed, "threads": threads, "training": {"epochs": epochs}, "paths": {"cache_dir": str(out)}})
    set_threads(resolved["threads"])
    out.mkdir(parents=True, exist_ok=True)
    manifest = random_corpus(n, seed, name="demo", balanced=False, split=None)
    write_manifest(manifest, out / "manifest.jsonl")
    cache_file = out / "embeddings.cache"
    if cache_file.exists():
        cache_file.unlink()
    cache = EmbeddingCache(cache_file, "a")
    encode_manifest(manifest.records, SyntheticBackend(), cache)
    config = train_config(resolved)
    model, history = train(manifest, cache, config)
    save_checkpoint(model, out / "model.ckpt", seed=config.seed)
    history_figure(history, out / "history.png")

    report = {"config": config.to_dict(), "final_epoch": history[-1], "tasks": {}}
    for task in EvalTask:
        r = evaluate(model, manifest, cache, task.value, split=None)
        confusion_figure(r, out / f"confusion-{task.value}.png")
        report["tasks"][task.value] = {
            "model": r.to_dict(),
            "majority": majority_baseline(manifest, manifest, task.value, test_split=None).to_dict(),
        }
    path = out / "report.json"
    _dump(report, path)
    write_snapshot(resolved, out)
    return path


def cmd_demo(args) -> int:
    path = run_demo(Path(args.out), seed=args.seed or 0, n=args.n, epochs=args.epochs, threads=args.threads or 1)
    print(json.dumps({"report": str(path)}))
    return 0


# --- parser -------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # one-line, machine-parsable usage errors
        self.exit(2, f"error: usage: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="momenta", description="Harmful-meme detection toolkit.")
    p.add_argument("--version", action="version", version=f"momenta {__version__} (manifest schema_version {SCHEMA_VERSION})")
    p.add_argument("--threads", type=int, default=None, help="intra-op threads; 1 forces deterministic mode")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("ingest", help="apply the collection filters")
    s.add_argument("--manifest", required=True)
    s.add_argument("--flags", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--rejects")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("dedup", help="group near-duplicate images, keep the largest")
    s.add_argument("--manifest", required=True)
    s.add_argument("--threshold", type=int)
    s.add_argument("--report", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.set_defaults(func=cmd_dedup)

    s = sub.add_parser("split", help="stratified train/validation/test split")
    s.add_argument("--manifest")
    s.add_argument("--ratios")
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.add_argument("--config")
    s.set_defaults(func=cmd_split)

    s = sub.add_parser("consolidate", help="majority-vote three annotations per meme")
    s.add_argument("--annotations", required=True)
    s.add_argument("--decided", required=True)
    s.add_argument("--escalations", required=True)
    s.set_defaults(func=cmd_consolidate)

    s = sub.add_parser("kappa", help="average pairwise Cohen's kappa")
    s.add_argument("--annotations", required=True)
    s.add_argument("--task", choices=["harm", "target"], required=True)
    s.set_defaults(func=cmd_kappa)

    s = sub.add_parser("encode", help="fill the embedding cache")
    s.add_argument("--manifest", required=True)
    s.add_argument("--backend", choices=["synthetic", "external"], default="synthetic")
    s.add_argument("--backend-factory", help="module:callable returning an EncoderBackend")
    s.add_argument("--cache")
    s.add_argument("--config")
    s.set_defaults(func=cmd_encode)

    def training_flags(s):
        s.add_argument("--config")
        s.add_argument("--cache")
        s.add_argument("--seed", type=int)
        s.add_argument("--variant")
        s.add_argument("--c-harm", type=int, choices=[2, 3])
        s.add_argument("--epochs", type=int)
        s.add_argument("--lambda-target", type=float)

    s = sub.add_parser("train", help="train a model")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    training_flags(s)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="score a checkpoint")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--manifest")
    s.add_argument("--task", choices=["harm2", "harm3", "target"])
    s.add_argument("--report")
    s.add_argument("--split", default="test", help="split to score; empty string for all records")
    s.add_argument("--cache")
    s.add_argument("--config")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("transfer", help="train-on-row / test-on-column macro-F1 grid")
    s.add_argument("--manifests", required=True)
    s.add_argument("--out", default="transfer")
    s.add_argument("--no-combined", action="store_true")
    training_flags(s)
    s.set_defaults(func=cmd_transfer)

    s = sub.add_parser("baseline", help="majority-class baseline")
    s.add_argument("--train", required=True)
    s.add_argument("--test", required=True)
    s.add_argument("--task", choices=["harm2", "harm3", "target"], required=True)
    s.add_argument("--report")
    s.set_defaults(func=cmd_baseline)

    s = sub.add_parser("demo", help="synthetic encode -> train -> eval run")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--n", type=int, default=60)
    s.add_argument("--epochs", type=int, default=20)
    s.set_defaults(func=cmd_demo)
    return p


def _classify(exc: BaseException) -> tuple[str, int]:
    from .annotation import ProtocolError
    from .config import ConfigError
    from .container import ChecksumError, ContainerFormatError
    from .encoders import BackendError, MissingCapabilityError, MissingEmbeddingsError
    from .model import VariantMismatchError
    from .training import TrainingDivergedError

    table = [
        (ConfigError, "config-invalid", 3),
        (ChecksumError, "checksum-error", 1),
        (ContainerFormatError, "container-format", 1),
        (MissingCapabilityError, "missing-capability", 1),
        (BackendError, "backend-failure", 1),
        (ProtocolError, "annotation-protocol", 1),
        (VariantMismatchError, "variant-mismatch", 1),
        (TrainingDivergedError, "training-diverged", 1),
        (MissingEmbeddingsError, "missing-embeddings", 1),
        (KeyError, "missing-data", 1),
        (FileNotFoundError, "file-not-found", 1),
        (ValueError, "invalid-input", 1),
    ]
    for kind, name, code in table:
        if isinstance(exc, kind):
            return name, code
    return "runtime-error", 1


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CLIError as exc:
        print(f"error: {exc.error_class}: {exc}", file=sys.stderr)
        return exc.code
    except Exception as exc:  # noqa: BLE001 - every failure becomes one stderr line
        name, code = _classify(exc)
        message = str(exc).replace("\n", " ")
        if isinstance(exc, KeyError) and exc.args:
            message = str(exc.args[0])
        print(f"error: {name}: {message}", file=sys.stderr)
        logger.debug("traceback", exc_info=True)
        return code


if __name__ == "__main__":
    sys.exit(main())
