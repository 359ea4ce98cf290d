"""Checkpoint directories: manifest.json plus one float32 blob per tensor.

Blobs are raw little-endian float32, one file per parameter (or float
buffer), filename = tensor name with '/' replaced by '__'. The manifest maps
every name to shape, dtype and sha256, and carries enough config to rebuild
the module architecture before loading values. created_at is the only
non-reproducible field; identity comparisons must exclude it.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import numpy as np

from .contrastive import Temperature
from .encoders import EncoderBundle, EncoderConfig, build_encoder
from .exceptions import CorruptionError, DataIOError, ShapeError

FORMAT_VERSION = 1


def blob_filename(name: str) -> str:
    return name.replace("/", "__")


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _write_json(path: Path, payload: dict) -> None:
    tmp = path.with_suffix(".tmp")
    with open(tmp, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def _read_json(path: Path) -> dict:
    if not path.is_file():
        raise DataIOError(f"missing manifest {path}")
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise CorruptionError(f"manifest {path} is not valid JSON: {exc}")


def manifest_fingerprint(manifest: dict) -> dict:
    """Manifest content that must be identical across reproduced runs."""
    return {k: v for k, v in manifest.items() if k != "created_at"}


def write_param_dir(path, blobs: dict, extra: Optional[dict] = None, kind: str = "params") -> dict:
    """Write blobs + manifest into a directory; returns the manifest."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    index = {}
    for name, arr in blobs.items():
        data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        fname = blob_filename(name)
        with open(out / fname, "wb") as fh:
            fh.write(data)
        index[name] = {
            "shape": list(arr.shape),
            "dtype": "float32",
            "sha256": _sha256(data),
        }
    manifest = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "created_at": datetime.now(timezone.utc).isoformat(),
        "parameters": index,
    }
    manifest.update(extra or {})
    _write_json(out / "manifest.json", manifest)
    return manifest


def read_param_dir(path) -> tuple[dict, dict]:
    """Read manifest + blobs, verifying sizes and hashes.

    Raises CorruptionError naming the offending blob on any mismatch.
    """
    root = Path(path)
    manifest = _read_json(root / "manifest.json")
    blobs = {}
    for name, meta in manifest.get("parameters", {}).items():
        fpath = root / blob_filename(name)
        if not fpath.is_file():
            raise CorruptionError(f"checkpoint blob {fpath} is missing")
        data = fpath.read_bytes()
        shape = tuple(meta["shape"])
        expected_bytes = int(np.prod(shape, dtype=np.int64)) * 4 if shape else 4
        if len(data) != expected_bytes:
            raise CorruptionError(
                f"checkpoint blob {fpath} has {len(data)} bytes, expected {expected_bytes}"
            )
        if _sha256(data) != meta["sha256"]:
            raise CorruptionError(f"checkpoint blob {fpath} failed sha256 verification")
        blobs[name] = np.frombuffer(data, dtype="<f4").reshape(shape).astype(np.float32)
    return manifest, blobs


# -- encoder bundles -------------------------------------------------------


def save_bundle(bundle: EncoderBundle, path) -> dict:
    extra = {
        "component": "encoder",
        "modality": bundle.config.modality,
        "frozen": bundle.frozen,
        "config": bundle.config.to_dict(),
    }
    return write_param_dir(path, bundle.parameter_blobs(), extra=extra, kind="encoder")


def load_bundle(path, expected_config: Optional[EncoderConfig] = None) -> EncoderBundle:
    """Rebuild an encoder from its directory.

    With expected_config given, the blobs are loaded into a module of that
    architecture instead; a width mismatch then raises ShapeError naming the
    first offending parameter.
    """
    manifest, blobs = read_param_dir(path)
    if manifest.get("kind") != "encoder":
        raise DataIOError(f"{path} is not an encoder checkpoint (kind={manifest.get('kind')!r})")
    config = expected_config or EncoderConfig.from_dict(manifest["config"])
    bundle = build_encoder(config, seed=0)
    bundle.load_parameter_blobs(blobs)
    bundle.set_frozen(bool(manifest.get("frozen", False)))
    return bundle


# -- full training checkpoints ---------------------------------------------


@dataclass
class LoadedHead:
    """Raw decoder payload; the downstream module rebuilds and loads it."""

    spec: dict
    arrays: dict


@dataclass
class Checkpoint:
    encoders: dict = field(default_factory=dict)
    heads: dict = field(default_factory=dict)
    temperature: Optional[Temperature] = None
    run_state: dict = field(default_factory=dict)


def save_checkpoint(
    path,
    encoders: Optional[dict] = None,
    heads: Optional[dict] = None,
    temperature: Optional[Temperature] = None,
    run_state: Optional[dict] = None,
) -> dict:
    """Write a checkpoint directory.

    encoders: name -> EncoderBundle (one subdirectory each)
    heads:    name -> (blobs dict, spec dict), from the downstream module
    """
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    components = {}
    for name, bundle in (encoders or {}).items():
        save_bundle(bundle, out / name)
        components[name] = "encoder"
    for name, (blobs, spec) in (heads or {}).items():
        write_param_dir(out / name, blobs, extra={"component": "head", "spec": spec}, kind="head")
        components[name] = "head"

    temp_entry = None
    if temperature is not None:
        data = np.array([temperature.log_tau.detach().cpu().numpy()], dtype="<f4").tobytes()
        with open(out / "log_tau.bin", "wb") as fh:
            fh.write(data)
        temp_entry = {
            "sha256": _sha256(data),
            "tau_min": temperature.tau_min,
            "tau_max": temperature.tau_max,
        }

    manifest = {
        "format_version": FORMAT_VERSION,
        "kind": "checkpoint",
        "created_at": datetime.now(timezone.utc).isoformat(),
        "components": components,
        "temperature": temp_entry,
        "run_state": run_state or {},
    }
    _write_json(out / "manifest.json", manifest)
    return manifest


def load_checkpoint(path) -> Checkpoint:
    root = Path(path)
    manifest = _read_json(root / "manifest.json")
    if manifest.get("kind") != "checkpoint":
        raise DataIOError(f"{path} is not a checkpoint directory (kind={manifest.get('kind')!r})")
    ckpt = Checkpoint(run_state=manifest.get("run_state", {}))
    for name, component in manifest.get("components", {}).items():
        if component == "encoder":
            ckpt.encoders[name] = load_bundle(root / name)
        elif component == "head":
            head_manifest, blobs = read_param_dir(root / name)
            ckpt.heads[name] = LoadedHead(spec=head_manifest["spec"], arrays=blobs)
        else:
            raise DataIOError(f"unknown checkpoint component kind {component!r} for {name!r}")

    temp_entry = manifest.get("temperature")
    if temp_entry is not None:
        fpath = root / "log_tau.bin"
        if not fpath.is_file():
            raise CorruptionError(f"checkpoint blob {fpath} is missing")
        data = fpath.read_bytes()
        if len(data) != 4:
            raise CorruptionError(f"checkpoint blob {fpath} has {len(data)} bytes, expected 4")
        if _sha256(data) != temp_entry["sha256"]:
            raise CorruptionError(f"checkpoint blob {fpath} failed sha256 verification")
        log_tau = float(np.frombuffer(data, dtype="<f4")[0])
        ckpt.temperature = Temperature.from_state(
            {"log_tau": log_tau, "tau_min": temp_entry["tau_min"], "tau_max": temp_entry["tau_max"]}
        )
    return ckpt
