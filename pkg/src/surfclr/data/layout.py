"""Dataset layout: index.csv schemas, descriptors, loading, splitting.

A dataset is a directory with an index.csv naming every sample's rasters by
path relative to that directory. The header determines the dataset kind:

    paired_agl:          sample_id,rgb_path,agl_path
    bitemporal_change:   sample_id,pre_path,post_path,mask_path[,split]
    mono_segmentation:   sample_id,image_path,mask_path[,split]
"""

from __future__ import annotations

import csv
import logging
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from ..exceptions import (
    ConfigurationError,
    CoRegistrationError,
    DataError,
    DataIOError,
    IndexingError,
    SchemaError,
)
from . import rasters
from .samples import BitemporalSample, MonoSample, PairedSample

logger = logging.getLogger(__name__)

KINDS = ("paired_agl", "bitemporal_change", "mono_segmentation")
SPLIT_NAMES = ("train", "val", "test")

_PATH_COLUMNS = {
    "paired_agl": ("rgb_path", "agl_path"),
    "bitemporal_change": ("pre_path", "post_path", "mask_path"),
    "mono_segmentation": ("image_path", "mask_path"),
}
_SPLIT_ALLOWED = {"paired_agl": False, "bitemporal_change": True, "mono_segmentation": True}


@dataclass
class DatasetDescriptor:
    """Everything needed to interpret a dataset directory."""

    kind: str
    root: Path
    num_classes: int = 2
    class_names: Optional[list[str]] = None
    h_max: float = 200.0
    nodata: float = rasters.NODATA
    predefined_splits: bool = False

    def __post_init__(self):
        self.root = Path(self.root)
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown dataset kind {self.kind!r}, expected one of {KINDS}")
        if self.num_classes < 2:
            raise ConfigurationError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.h_max <= 0:
            raise ConfigurationError(f"h_max must be > 0, got {self.h_max}")


@dataclass
class SampleRecord:
    """One index row: resolved raster paths plus an optional split tag."""

    sample_id: str
    paths: dict
    split: Optional[str] = None


def expected_header(kind: str, with_split: bool = False) -> list[str]:
    cols = ["sample_id", *_PATH_COLUMNS[kind]]
    if with_split:
        cols.append("split")
    return cols


def sniff_kind(root) -> str:
    """Identify the dataset kind from the index.csv header."""
    index = Path(root) / "index.csv"
    if not index.is_file():
        raise IndexingError(f"no index.csv under {root}")
    with open(index, newline="") as fh:
        header = next(csv.reader(fh), None)
    if header is None:
        raise SchemaError(f"{index} is empty")
    for kind in KINDS:
        if header in (expected_header(kind), expected_header(kind, with_split=True)):
            return kind
    raise SchemaError(f"{index} header {header!r} matches no known dataset kind")


def index_dataset(descriptor: DatasetDescriptor) -> list[SampleRecord]:
    """Read and validate index.csv; returns records sorted by sample_id.

    Fails with one error listing every missing or unreadable raster rather
    than stopping at the first.
    """
    index = descriptor.root / "index.csv"
    if not index.is_file():
        raise IndexingError(f"no index.csv under {descriptor.root}")
    with open(index, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        rows = [row for row in reader if row]
    kind = descriptor.kind
    has_split = False
    if header == expected_header(kind, with_split=True) and _SPLIT_ALLOWED[kind]:
        has_split = True
    elif header != expected_header(kind):
        raise SchemaError(
            f"{index}: header {header!r} does not match {expected_header(kind)!r} "
            f"for kind {kind!r}"
        )

    path_cols = _PATH_COLUMNS[kind]
    records: list[SampleRecord] = []
    seen: set[str] = set()
    missing: list[str] = []
    unreadable: list[str] = []
    for lineno, row in enumerate(rows, start=2):
        width = 1 + len(path_cols) + (1 if has_split else 0)
        if len(row) != width:
            raise SchemaError(f"{index}:{lineno}: expected {width} fields, got {len(row)}")
        sample_id = row[0].strip()
        if not sample_id:
            raise SchemaError(f"{index}:{lineno}: empty sample_id")
        if sample_id in seen:
            raise SchemaError(f"{index}:{lineno}: duplicate sample_id {sample_id!r}")
        seen.add(sample_id)
        paths = {}
        for col, rel in zip(path_cols, row[1 : 1 + len(path_cols)]):
            p = descriptor.root / rel
            paths[col] = p
            if not p.is_file():
                missing.append(str(p))
                continue
            try:
                with Image.open(p):
                    pass  # header parse only
            except Exception:
                unreadable.append(str(p))
        split = None
        if has_split:
            split = row[-1].strip() or None
            if split is not None and split not in SPLIT_NAMES:
                raise SchemaError(
                    f"{index}:{lineno}: split {split!r} not in {SPLIT_NAMES}"
                )
        records.append(SampleRecord(sample_id=sample_id, paths=paths, split=split))

    if missing:
        raise IndexingError(
            f"{len(missing)} raster(s) referenced by {index} are missing: " + ", ".join(missing)
        )
    if unreadable:
        raise DataIOError(
            f"{len(unreadable)} raster(s) referenced by {index} cannot be opened: "
            + ", ".join(unreadable)
        )
    if not records:
        raise IndexingError(f"{index} lists no samples")
    records.sort(key=lambda r: r.sample_id)
    return records


def split_dataset(
    records: list[SampleRecord], val_fraction: float, seed: int
) -> tuple[list[SampleRecord], list[SampleRecord]]:
    """Deterministic train/val partition by sample_id shuffle.

    If the index carries predefined splits they win: the declared partition
    is returned unchanged and a warning is logged.
    """
    if any(r.split for r in records):
        logger.warning("dataset has predefined splits; val_fraction/seed ignored")
        train = [r for r in records if r.split == "train"]
        val = [r for r in records if r.split == "val"]
        return train, val
    if not (0.0 < val_fraction < 1.0):
        raise ConfigurationError(f"val_fraction must be in (0, 1), got {val_fraction}")
    ordered = sorted(records, key=lambda r: r.sample_id)
    rng = random.Random(seed)
    rng.shuffle(ordered)
    n_val = round(val_fraction * len(ordered))
    if n_val == 0:
        raise ConfigurationError(
            f"val_fraction {val_fraction} yields an empty validation split for {len(ordered)} samples"
        )
    if n_val == len(ordered):
        raise ConfigurationError(
            f"val_fraction {val_fraction} yields an empty train split for {len(ordered)} samples"
        )
    val = sorted(ordered[:n_val], key=lambda r: r.sample_id)
    train = sorted(ordered[n_val:], key=lambda r: r.sample_id)
    return train, val


def load_pair(record: SampleRecord, descriptor: DatasetDescriptor) -> PairedSample:
    """Load one RGB + height pair; clips heights to [0, h_max], zeroes nodata."""
    rgb = rasters.read_rgb(record.paths["rgb_path"])
    agl = rasters.read_height(record.paths["agl_path"])
    if rgb.shape[:2] != agl.shape:
        raise CoRegistrationError(
            f"sample {record.sample_id!r}: RGB {rgb.shape[:2]} and AGL {agl.shape} disagree"
        )
    validity = agl != descriptor.nodata
    clipped = np.clip(agl, 0.0, descriptor.h_max).astype(np.float32)
    clipped[~validity] = 0.0
    return PairedSample(
        sample_id=record.sample_id,
        rgb=rgb,
        agl=clipped[..., None],
        validity=validity,
    )


def _check_labels(mask: np.ndarray, num_classes: int, sample_id: str, path) -> None:
    hi = int(mask.max())
    lo = int(mask.min())
    if lo < 0 or hi >= num_classes:
        bad = lo if lo < 0 else hi
        raise DataError(
            f"sample {sample_id!r}: mask {path} contains label {bad}, outside [0, {num_classes - 1}]"
        )


def load_bitemporal(record: SampleRecord, descriptor: DatasetDescriptor) -> BitemporalSample:
    pre = rasters.read_rgb(record.paths["pre_path"])
    post = rasters.read_rgb(record.paths["post_path"])
    mask = rasters.read_mask(record.paths["mask_path"])
    if pre.shape != post.shape or pre.shape[:2] != mask.shape:
        raise CoRegistrationError(
            f"sample {record.sample_id!r}: pre {pre.shape}, post {post.shape}, "
            f"mask {mask.shape} disagree"
        )
    _check_labels(mask, descriptor.num_classes, record.sample_id, record.paths["mask_path"])
    return BitemporalSample(
        sample_id=record.sample_id, pre=pre, post=post, mask=mask, split=record.split
    )


def load_mono(record: SampleRecord, descriptor: DatasetDescriptor) -> MonoSample:
    image = rasters.read_rgb(record.paths["image_path"])
    mask = rasters.read_mask(record.paths["mask_path"])
    if image.shape[:2] != mask.shape:
        raise CoRegistrationError(
            f"sample {record.sample_id!r}: image {image.shape} and mask {mask.shape} disagree"
        )
    _check_labels(mask, descriptor.num_classes, record.sample_id, record.paths["mask_path"])
    return MonoSample(sample_id=record.sample_id, image=image, mask=mask, split=record.split)


@dataclass
class Dataset:
    """A descriptor plus its validated index."""

    descriptor: DatasetDescriptor
    records: list[SampleRecord] = field(default_factory=list)

    @classmethod
    def open(
        cls,
        root,
        kind: Optional[str] = None,
        num_classes: int = 2,
        class_names: Optional[list[str]] = None,
        h_max: float = 200.0,
    ) -> "Dataset":
        found = sniff_kind(root)
        if kind is not None and kind != found:
            raise ConfigurationError(
                f"dataset under {root} is {found!r}, but {kind!r} was requested"
            )
        descriptor = DatasetDescriptor(
            kind=found,
            root=Path(root),
            num_classes=num_classes,
            class_names=class_names,
            h_max=h_max,
        )
        records = index_dataset(descriptor)
        descriptor.predefined_splits = any(r.split for r in records)
        return cls(descriptor=descriptor, records=records)

    def load(self, record: SampleRecord):
        kind = self.descriptor.kind
        if kind == "paired_agl":
            return load_pair(record, self.descriptor)
        if kind == "bitemporal_change":
            return load_bitemporal(record, self.descriptor)
        return load_mono(record, self.descriptor)

    def __len__(self) -> int:
        return len(self.records)
