"""In-memory sample containers shared by loaders, generators and training."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np


@dataclass
class PairedSample:
    """Co-registered RGB and above-ground-level height rasters."""

    sample_id: str
    rgb: np.ndarray  # (H, W, 3) float32 in [0, 1]
    agl: np.ndarray  # (H, W, 1) float32 meters, 0 where invalid
    validity: np.ndarray  # (H, W) bool, False at nodata pixels

    @property
    def height_px(self) -> int:
        return self.rgb.shape[0]

    @property
    def width_px(self) -> int:
        return self.rgb.shape[1]


@dataclass
class BitemporalSample:
    """Pre/post RGB pair with a per-pixel change mask."""

    sample_id: str
    pre: np.ndarray  # (H, W, 3) float32 in [0, 1]
    post: np.ndarray  # (H, W, 3) float32 in [0, 1]
    mask: np.ndarray  # (H, W) int64 class labels
    split: Optional[str] = None

    @property
    def height_px(self) -> int:
        return self.pre.shape[0]

    @property
    def width_px(self) -> int:
        return self.pre.shape[1]


@dataclass
class MonoSample:
    """Single RGB image with a per-pixel label mask."""

    sample_id: str
    image: np.ndarray  # (H, W, 3) float32 in [0, 1]
    mask: np.ndarray  # (H, W) int64 class labels
    split: Optional[str] = None

    @property
    def height_px(self) -> int:
        return self.image.shape[0]

    @property
    def width_px(self) -> int:
        return self.image.shape[1]
