"""Co-located patch extraction for all sample types."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..exceptions import ConfigurationError
from ..seeding import stable_seed
from .samples import BitemporalSample, MonoSample, PairedSample

STRATEGIES = ("random_crop", "grid")


@dataclass
class PatchSpec:
    """How to cut patches out of a full scene.

    random_crop draws patches_per_image offsets from an rng derived from
    (seed, sample_id), so the same spec on the same sample always yields the
    same windows while distinct samples get independent ones.
    """

    size: int = 512
    strategy: str = "random_crop"
    patches_per_image: int = 1
    seed: int = 0

    def validate(self) -> None:
        if self.size < 1:
            raise ConfigurationError(f"patch size must be >= 1, got {self.size}")
        if self.strategy not in STRATEGIES:
            raise ConfigurationError(
                f"strategy must be one of {STRATEGIES}, got {self.strategy!r}"
            )
        if self.patches_per_image < 1:
            raise ConfigurationError(
                f"patches_per_image must be >= 1, got {self.patches_per_image}"
            )


def _window(sample, y: int, x: int, size: int, tag: str):
    sl = (slice(y, y + size), slice(x, x + size))
    new_id = f"{sample.sample_id}@{tag}"
    if isinstance(sample, PairedSample):
        return PairedSample(
            sample_id=new_id,
            rgb=sample.rgb[sl],
            agl=sample.agl[sl],
            validity=sample.validity[sl],
        )
    if isinstance(sample, BitemporalSample):
        return BitemporalSample(
            sample_id=new_id,
            pre=sample.pre[sl],
            post=sample.post[sl],
            mask=sample.mask[sl],
            split=sample.split,
        )
    if isinstance(sample, MonoSample):
        return MonoSample(
            sample_id=new_id, image=sample.image[sl], mask=sample.mask[sl], split=sample.split
        )
    raise ConfigurationError(f"unsupported sample type {type(sample).__name__}")


def extract_patches(sample, spec: PatchSpec) -> list:
    """Cut patches; every raster field of the sample is cropped identically."""
    spec.validate()
    h, w = sample.height_px, sample.width_px
    if spec.size > h or spec.size > w:
        raise ConfigurationError(
            f"patch size {spec.size} exceeds image size {h}x{w} for sample {sample.sample_id!r}"
        )
    out = []
    if spec.strategy == "grid":
        rows, cols = h // spec.size, w // spec.size
        for r in range(rows):
            for c in range(cols):
                out.append(_window(sample, r * spec.size, c * spec.size, spec.size, f"r{r}c{c}"))
    else:
        rng = np.random.default_rng(stable_seed(spec.seed, sample.sample_id))
        for j in range(spec.patches_per_image):
            y = int(rng.integers(0, h - spec.size + 1))
            x = int(rng.integers(0, w - spec.size + 1))
            out.append(_window(sample, y, x, spec.size, f"p{j}y{y}x{x}"))
    return out
