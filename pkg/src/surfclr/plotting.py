"""Report figures: sample panels composed in numpy, curves via matplotlib.

Panels are assembled pixel-by-pixel (no fonts, no antialiasing) so the same
inputs always produce byte-identical PNGs.
"""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")  # headless, deterministic in-process rendering

import matplotlib.pyplot as plt
import numpy as np

from .data.samples import BitemporalSample, MonoSample, PairedSample
from .exceptions import ConfigurationError, DataError, DataIOError
from .data import rasters

# class colors: background, then saturated hues (cycled past 8 classes)
PALETTE = np.array(
    [
        [0, 0, 0],
        [220, 60, 50],
        [80, 170, 80],
        [70, 100, 220],
        [230, 200, 60],
        [170, 80, 200],
        [70, 200, 210],
        [240, 140, 50],
    ],
    dtype=np.uint8,
)


def mask_to_rgb(mask: np.ndarray) -> np.ndarray:
    idx = np.asarray(mask, dtype=np.int64) % len(PALETTE)
    return PALETTE[idx]


def rgb_to_uint8(rgb01: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(rgb01) * 255.0), 0, 255).astype(np.uint8)


def height_to_rgb(agl_m: np.ndarray, h_max: float) -> np.ndarray:
    """Grayscale height rendering over a fixed [0, h_max] scale."""
    a = np.asarray(agl_m, dtype=np.float32)
    if a.ndim == 3:
        a = a[..., 0]
    gray = np.clip(a / float(h_max), 0.0, 1.0)
    return rgb_to_uint8(np.repeat(gray[..., None], 3, axis=-1))


def compose_panel(images: list, gutter: int = 4) -> np.ndarray:
    """Lay out equally-sized HxWx3 uint8 tiles left to right."""
    if not images:
        raise ConfigurationError("panel needs at least one image")
    h = images[0].shape[0]
    for im in images:
        if im.shape[0] != h or im.ndim != 3:
            raise DataError("panel tiles must share height and be HxWx3")
    strip = np.full((h, gutter, 3), 255, dtype=np.uint8)
    parts = []
    for i, im in enumerate(images):
        if i:
            parts.append(strip)
        parts.append(im.astype(np.uint8))
    return np.concatenate(parts, axis=1)


def sample_panel(sample, prediction: np.ndarray = None, h_max: float = 200.0) -> np.ndarray:
    """Standard panel for one sample; prediction tile appended when given."""
    if isinstance(sample, PairedSample):
        tiles = [rgb_to_uint8(sample.rgb), height_to_rgb(sample.agl, h_max)]
    elif isinstance(sample, BitemporalSample):
        tiles = [rgb_to_uint8(sample.pre), rgb_to_uint8(sample.post), mask_to_rgb(sample.mask)]
    elif isinstance(sample, MonoSample):
        tiles = [rgb_to_uint8(sample.image), mask_to_rgb(sample.mask)]
    else:
        raise ConfigurationError(f"no panel layout for {type(sample).__name__}")
    if prediction is not None:
        tiles.append(mask_to_rgb(prediction))
    return compose_panel(tiles)


def save_panel(path, panel: np.ndarray) -> None:
    rasters.write_rgb(path, panel.astype(np.float32) / 255.0)


def read_log(run_dir) -> list:
    """Load log.jsonl rows; refuses empty logs."""
    path = Path(run_dir) / "log.jsonl"
    if not path.is_file():
        raise DataIOError(f"no log.jsonl under {run_dir}")
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    if not rows:
        raise DataError(f"{path} holds no epochs; nothing to plot")
    return rows


_CURVE_KEYS = ("train_loss", "val_loss")
_AUX_KEYS = ("val_top1", "val_miou", "val_change_iou")


def render_curves(rows: list, out_path) -> None:
    """Loss curves (left axis) plus retrieval/IoU curves (right axis)."""
    if not rows:
        raise DataError("empty run log; nothing to plot")
    epochs = [r["epoch"] for r in rows]
    fig, ax = plt.subplots(figsize=(7, 4.2), dpi=110)
    for key in _CURVE_KEYS:
        series = [r.get(key) for r in rows]
        if any(v is not None for v in series):
            ax.plot(epochs, series, label=key)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax2 = None
    for key in _AUX_KEYS:
        series = [r.get(key) for r in rows]
        if any(v is not None for v in series):
            if ax2 is None:
                ax2 = ax.twinx()
                ax2.set_ylabel("score")
                ax2.set_ylim(0.0, 1.0)
            ax2.plot(epochs, series, linestyle="--", label=key)
    handles, labels = ax.get_legend_handles_labels()
    if ax2 is not None:
        h2, l2 = ax2.get_legend_handles_labels()
        handles += h2
        labels += l2
    if handles:
        ax.legend(handles, labels, loc="best", fontsize=8)
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, metadata={"Software": "surfclr"})
    plt.close(fig)
