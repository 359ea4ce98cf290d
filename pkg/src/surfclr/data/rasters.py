"""Raster file I/O.

RGB images are 8-bit PNG, height maps are single-band float32 TIFF, label
masks are 8-bit single-band PNG. All readers return numpy arrays and wrap
file problems in DataIOError.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from ..exceptions import DataError, DataIOError

NODATA = -9999.0


def _open(path) -> Image.Image:
    try:
        return Image.open(path)
    except FileNotFoundError:
        raise DataIOError(f"raster not found: {path}")
    except Exception as exc:
        raise DataIOError(f"cannot read raster {path}: {exc}")


def read_rgb(path) -> np.ndarray:
    """Read an RGB image as (H, W, 3) float32 in [0, 1]."""
    with _open(path) as img:
        if img.mode != "RGB":
            img = img.convert("RGB")
        arr = np.asarray(img, dtype=np.float32)
    return arr / 255.0


def write_rgb(path, rgb01: np.ndarray) -> None:
    """Write (H, W, 3) float values in [0, 1] as 8-bit PNG."""
    arr = np.asarray(rgb01, dtype=np.float32)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise DataError(f"expected (H, W, 3) image, got {arr.shape}")
    data = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    try:
        Image.fromarray(data, mode="RGB").save(path, format="PNG")
    except Exception as exc:
        raise DataIOError(f"cannot write raster {path}: {exc}")


def read_height(path) -> np.ndarray:
    """Read a single-band float32 height raster as (H, W)."""
    with _open(path) as img:
        if img.mode != "F":
            img = img.convert("F")
        arr = np.asarray(img, dtype=np.float32)
    if arr.ndim != 2:
        raise DataError(f"height raster must be single-band, got shape {arr.shape}")
    return arr


def write_height(path, heights_m: np.ndarray) -> None:
    """Write an (H, W) float array as float32 TIFF (lossless round-trip)."""
    arr = np.asarray(heights_m, dtype=np.float32)
    if arr.ndim != 2:
        raise DataError(f"expected (H, W) height raster, got {arr.shape}")
    try:
        Image.fromarray(arr, mode="F").save(path, format="TIFF")
    except Exception as exc:
        raise DataIOError(f"cannot write raster {path}: {exc}")


def read_mask(path) -> np.ndarray:
    """Read a label mask as (H, W) int64."""
    with _open(path) as img:
        if img.mode not in ("L", "P", "I"):
            img = img.convert("L")
        arr = np.asarray(img)
    if arr.ndim != 2:
        raise DataError(f"mask raster must be single-band, got shape {arr.shape}")
    return arr.astype(np.int64)


def write_mask(path, mask: np.ndarray) -> None:
    """Write integer labels in [0, 255] as 8-bit single-band PNG."""
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise DataError(f"expected (H, W) mask, got {arr.shape}")
    if arr.min() < 0 or arr.max() > 255:
        raise DataError(f"mask labels outside [0, 255]: [{arr.min()}, {arr.max()}]")
    try:
        Image.fromarray(arr.astype(np.uint8), mode="L").save(path, format="PNG")
    except Exception as exc:
        raise DataIOError(f"cannot write raster {path}: {exc}")
