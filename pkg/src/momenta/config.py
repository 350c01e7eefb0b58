"""Run configuration: a JSON document validated against :data:`CONFIG_SCHEMA`."""

from __future__ import annotations

import copy
import json
import os
from pathlib import Path
from typing import Mapping, Optional, Union

import jsonschema

from .model import VARIANTS
from .training import TrainConfig

CACHE_DIR_ENV = "MOMENTA_CACHE_DIR"

_number = {"type": "number"}
_pos_int = {"type": "integer", "minimum": 1}
_alpha = {"oneOf": [{"type": "null"}, {"type": "array", "items": {"type": "number", "minimum": 0}}]}


def _section(properties: dict) -> dict:
    return {"type": "object", "additionalProperties": False, "properties": properties}


CONFIG_SCHEMA: dict = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "momenta run configuration",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer"},
        "threads": _pos_int,
        "pipeline": _section({
            "hamming_threshold": {"type": "integer", "minimum": 0, "maximum": 64},
            "ratios": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 3, "maxItems": 3},
        }),
        "annotation": _section({"task": {"enum": ["harm", "target"]}}),
        "encoder": _section({
            "backend": {"type": "string"},
            "n_proposals": {"oneOf": [{"type": "null"}, {"type": "integer", "minimum": 0}]},
            "n_attributes": {"oneOf": [{"type": "null"}, {"type": "integer", "minimum": 0}]},
        }),
        "model": _section({
            "variant": {"enum": list(VARIANTS)},
            "c_harm": {"enum": [2, 3]},
            "hidden": _pos_int,
        }),
        "training": _section({
            "batch_size": _pos_int,
            "epochs": _pos_int,
            "learning_rate": {"type": "number", "exclusiveMinimum": 0},
            "beta1": _number,
            "beta2": _number,
            "eps": {"type": "number", "exclusiveMinimum": 0},
            "focal_gamma": {"type": "number", "minimum": 0},
            "focal_alpha_harm": _alpha,
            "focal_alpha_target": _alpha,
            "lambda_target": {"type": "number", "minimum": 0},
            "early_stopping": {"type": "boolean"},
            "patience": _pos_int,
        }),
        "paths": _section({"cache_dir": {"type": "string"}}),
    },
}

DEFAULTS: dict = {
    "seed": 0,
    "threads": 1,
    "pipeline": {"hamming_threshold": 4, "ratios": [0.85, 0.05, 0.10]},
    "annotation": {"task": "harm"},
    "encoder": {"backend": "synthetic", "n_proposals": None, "n_attributes": None},
    "model": {"variant": "full", "c_harm": 3, "hidden": 128},
    "training": {
        "batch_size": 64,
        "epochs": 50,
        "learning_rate": 0.001,
        "beta1": 0.9,
        "beta2": 0.999,
        "eps": 1e-8,
        "focal_gamma": 2.0,
        "focal_alpha_harm": None,
        "focal_alpha_target": None,
        "lambda_target": 1.0,
        "early_stopping": False,
        "patience": 5,
    },
    "paths": {"cache_dir": "."},
}


class ConfigError(ValueError):
    pass


def _merge(base: dict, override: Mapping) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, Mapping) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def validate(doc: Mapping) -> None:
    try:
        jsonschema.validate(doc, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from None


def resolve(path: Optional[Union[str, Path]] = None, overrides: Optional[Mapping] = None) -> dict:
    """Defaults, then the file at ``path``, then ``overrides`` (e.g. from CLI flags)."""
    doc: dict = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        validate(doc)
    resolved = _merge(DEFAULTS, doc)
    if overrides:
        resolved = _merge(resolved, overrides)
    if os.environ.get(CACHE_DIR_ENV):
        resolved["paths"]["cache_dir"] = os.environ[CACHE_DIR_ENV]
    validate(resolved)
    return resolved


def train_config(resolved: Mapping) -> TrainConfig:
    t, m = resolved["training"], resolved["model"]
    try:
        return TrainConfig(seed=resolved["seed"], c_harm=m["c_harm"], variant=m["variant"], hidden=m["hidden"], **t)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def write_snapshot(resolved: Mapping, output: Union[str, Path]) -> Path:
    """Write ``<output>.config.json`` beside an output file (or inside an output directory)."""
    output = Path(output)
    target = output / "resolved-config.json" if output.is_dir() else output.with_name(output.name + ".config.json")
    target.write_text(json.dumps(resolved, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return target


def cache_path(resolved: Mapping, explicit: Optional[str] = None) -> Path:
    if explicit:
        return Path(explicit)
    return Path(resolved["paths"]["cache_dir"]) / "embeddings.cache"

