"""Config files (YAML or JSON) with strict schema checking and overrides.

The tree is validated against a fixed schema: unknown keys, wrong types and
malformed --set overrides are all collected and reported together in one
ConfigurationError. Every value has a default, so a config file only needs
the keys it wants to change.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path
from typing import Any, Optional

import yaml

from .exceptions import ConfigurationError, DataIOError, SchemaError


class _Spec:
    """Leaf schema node: accepted python types plus optional choices."""

    def __init__(self, types, default, choices=None, allow_none=False):
        self.types = types if isinstance(types, tuple) else (types,)
        self.default = default
        self.choices = choices
        self.allow_none = allow_none

    def check(self, value, path: str, problems: list) -> Any:
        if value is None:
            if self.allow_none:
                return None
            problems.append(f"{path}: null is not allowed")
            return self.default
        if isinstance(value, bool) and bool not in self.types:
            problems.append(f"{path}: expected {self._names()}, got boolean")
            return self.default
        if float in self.types and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if not isinstance(value, self.types):
            problems.append(
                f"{path}: expected {self._names()}, got {type(value).__name__}"
            )
            return self.default
        if self.choices is not None and value not in self.choices:
            problems.append(f"{path}: {value!r} not in {sorted(self.choices)}")
        return value

    def _names(self) -> str:
        return "/".join(t.__name__ for t in self.types)


def _patch_schema() -> dict:
    return {
        "size": _Spec(int, None, allow_none=True),
        "strategy": _Spec(str, "random_crop", choices={"random_crop", "grid"}),
        "patches_per_image": _Spec(int, 1),
    }


def _train_schema(
    epochs_default: Optional[int],
    batch_default: int = 16,
    lr_default: float = 1e-3,
    clip_default: Optional[float] = None,
) -> dict:
    return {
        "batch_size": _Spec(int, batch_default),
        "epochs": _Spec(int, epochs_default, allow_none=True),
        "learning_rate": _Spec(float, lr_default),
        "weight_decay": _Spec(float, 0.01),
        "optimizer": _Spec(str, "adamw", choices={"adamw"}),
        "val_fraction": _Spec(float, 0.2),
        "checkpoint_every": _Spec(int, None, allow_none=True),
        "grad_clip_norm": _Spec(float, clip_default, allow_none=True),
        "negatives": _Spec(str, "all", choices={"all", "cross_modal_only"}),
        "tau_init": _Spec(float, 0.07),
        "tau_min": _Spec(float, 0.01),
        "tau_max": _Spec(float, 1.0),
        "eval_batch_size": _Spec(int, None, allow_none=True),
    }


SCHEMA: dict = {
    "seed": _Spec(int, 1),
    "encoder": {
        "width_multiplier": _Spec(float, 1.0),
        "feature_dim": _Spec(int, 512),
        "projection_hidden_dim": _Spec(int, 512),
        "projection_dim": _Spec(int, 128),
    },
    "synth": {
        "kind": _Spec(str, "paired", choices={"paired", "change"}),
        "out": _Spec(str, "data/synth"),
        "n": _Spec(int, 16),
        "force": _Spec(bool, False),
        "scene": {
            "size": _Spec(int, 64),
            "buildings_min": _Spec(int, 2),
            "buildings_max": _Spec(int, 6),
            "footprint_min": _Spec(int, 8),
            "footprint_max": _Spec(int, 24),
            "height_min": _Spec(float, 2.0),
            "height_max": _Spec(float, 60.0),
            "texture_amplitude": _Spec(float, 0.15),
            "texture_cells": _Spec(int, 8),
            "shadow_px_per_m": _Spec(float, 0.12),
            "shadow_strength": _Spec(float, 0.55),
        },
        "change": {
            "add_min": _Spec(int, 1),
            "add_max": _Spec(int, 3),
            "remove_min": _Spec(int, 0),
            "remove_max": _Spec(int, 2),
            "retint_probability": _Spec(float, 0.6),
            "brightness_jitter": _Spec(float, 0.08),
        },
    },
    "pretrain": {
        "dataset": _Spec(str, "data/paired"),
        "run_dir": _Spec(str, "runs/pretrain"),
        "h_max": _Spec(float, 200.0),
        "patch": _patch_schema(),
        "train": _train_schema(None),
    },
    "finetune": {
        "dataset": _Spec(str, "data/change"),
        "run_dir": _Spec(str, "runs/finetune"),
        "encoder_checkpoint": _Spec(str, "runs/pretrain/ckpt-final"),
        "encoder_name": _Spec(str, "rgb"),
        "random_encoder": _Spec(bool, False),
        "head": {
            "architecture": _Spec(str, "fc_siam_diff", choices={"fc_siam_diff", "unet"}),
            "num_classes": _Spec(int, 2),
            "fusion": _Spec(str, "abs_diff", choices={"abs_diff", "diff"}),
            "decoder_widths": _Spec(list, None, allow_none=True),
        },
        "patch": _patch_schema(),
        "train": _train_schema(None, batch_default=8, lr_default=2e-3, clip_default=1.0),
    },
    "evaluate": {
        "checkpoint": _Spec(str, "runs/finetune/ckpt-final"),
        "dataset": _Spec(str, "data/change"),
        "split": _Spec(str, "val", choices={"train", "val", "test"}),
        "out": _Spec(str, "runs/finetune/eval"),
        "val_fraction": _Spec(float, 0.2),
        "batch_size": _Spec(int, 16),
        "num_classes": _Spec(int, 2),
    },
    "embed": {
        "checkpoint": _Spec(str, "runs/pretrain/ckpt-final"),
        "dataset": _Spec(str, "data/paired"),
        "out": _Spec(str, "embeddings.npz"),
        "batch_size": _Spec(int, 64),
        "h_max": _Spec(float, 200.0),
    },
    "plot": {
        "run_dir": _Spec(str, "runs/finetune"),
        "eval_dir": _Spec(str, None, allow_none=True),
        "dataset": _Spec(str, None, allow_none=True),
        "out": _Spec(str, "plots"),
        "samples": _Spec(int, 4),
    },
}


def default_config() -> dict:
    def walk(node):
        if isinstance(node, _Spec):
            return copy.deepcopy(node.default)
        return {k: walk(v) for k, v in node.items()}

    return walk(SCHEMA)


def _validate(node, schema, path: str, problems: list):
    if isinstance(schema, _Spec):
        return schema.check(node, path or "<root>", problems)
    if not isinstance(node, dict):
        problems.append(f"{path or '<root>'}: expected a mapping, got {type(node).__name__}")
        return _validate_default(schema)
    out = {}
    for key, value in node.items():
        child = f"{path}.{key}" if path else key
        if key not in schema:
            problems.append(f"{child}: unknown key")
            continue
        out[key] = _validate(value, schema[key], child, problems)
    for key, sub in schema.items():
        if key not in out:
            child = f"{path}.{key}" if path else key
            out[key] = _validate_default(sub)
    return out


def _validate_default(schema):
    if isinstance(schema, _Spec):
        return copy.deepcopy(schema.default)
    return {k: _validate_default(v) for k, v in schema.items()}


def parse_override(text: str) -> tuple[list[str], Any]:
    """Parse one dotted --set override, e.g. 'pretrain.train.epochs=30'."""
    if "=" not in text:
        raise ConfigurationError(f"override {text!r} must look like section.key=value")
    key, _, raw = text.partition("=")
    key = key.strip()
    if not key:
        raise ConfigurationError(f"override {text!r} has an empty key path")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"override {text!r}: cannot parse value ({exc})")
    return key.split("."), value


def apply_overrides(tree: dict, overrides: list) -> dict:
    problems = []
    for text in overrides:
        path, value = parse_override(text)
        node = tree
        schema = SCHEMA
        ok = True
        for part in path[:-1]:
            if not isinstance(schema, dict) or part not in schema:
                problems.append(f"{'.'.join(path)}: unknown key")
                ok = False
                break
            schema = schema[part]
            node = node.setdefault(part, {})
        if not ok:
            continue
        leaf = path[-1]
        if not isinstance(schema, dict) or leaf not in schema:
            problems.append(f"{'.'.join(path)}: unknown key")
            continue
        node[leaf] = value
    if problems:
        raise ConfigurationError("invalid overrides: " + "; ".join(problems))
    return tree


def load_config(path=None, overrides: Optional[list] = None) -> dict:
    """Read, override and validate a config tree; returns the resolved dict."""
    if path is None:
        raw: dict = {}
    else:
        p = Path(path)
        if not p.is_file():
            raise DataIOError(f"config file not found: {p}")
        text = p.read_text()
        try:
            if p.suffix.lower() == ".json":
                raw = json.loads(text)
            else:
                raw = yaml.safe_load(text)
        except (json.JSONDecodeError, yaml.YAMLError) as exc:
            raise SchemaError(f"cannot parse config {p}: {exc}")
        if raw is None:
            raw = {}
        if not isinstance(raw, dict):
            raise SchemaError(f"config {p} must be a mapping at the top level")
    if overrides:
        raw = apply_overrides(raw, list(overrides))
    problems: list = []
    resolved = _validate(raw, SCHEMA, "", problems)
    if problems:
        raise ConfigurationError(
            f"{len(problems)} config problem(s): " + "; ".join(problems)
        )
    return resolved
