"""Synthetic paired scenes and bitemporal change pairs.

Scenes are flat textured ground plus axis-aligned rectangular buildings.
Each building has a height in meters; the height raster is the per-pixel max
of the covering buildings, and the RGB rendering paints a roof color plus a
shadow band offset along a fixed sun azimuth, its length proportional to
height. Change pairs re-render the same ground with buildings added and/or
removed; the change mask is the XOR of footprint presence, while appearance
nuisance (roof re-tints, global brightness jitter) deliberately stays out of
the mask.

All randomness flows through np.random.default_rng seeded from explicit
integers, so every artifact is reproducible from (seed, config) alone.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..exceptions import ConfigurationError
from ..seeding import stable_seed
from . import rasters
from .samples import BitemporalSample, PairedSample

SUN_STEP = (1, 1)  # shadow marches one pixel down and right per unit length


@dataclass
class SceneConfig:
    size: int = 64
    buildings_min: int = 2
    buildings_max: int = 6
    footprint_min: int = 8
    footprint_max: int = 24
    height_min: float = 2.0
    height_max: float = 60.0
    texture_amplitude: float = 0.15
    texture_cells: int = 8
    shadow_px_per_m: float = 0.12
    shadow_strength: float = 0.55

    def validate(self) -> None:
        if self.size < 1:
            raise ConfigurationError(f"scene size must be >= 1, got {self.size}")
        if not (0 <= self.buildings_min <= self.buildings_max):
            raise ConfigurationError(
                f"need 0 <= buildings_min <= buildings_max, got "
                f"[{self.buildings_min}, {self.buildings_max}]"
            )
        if not (1 <= self.footprint_min <= self.footprint_max <= self.size):
            raise ConfigurationError(
                f"need 1 <= footprint_min <= footprint_max <= size, got "
                f"[{self.footprint_min}, {self.footprint_max}] with size {self.size}"
            )
        if not (0 < self.height_min <= self.height_max):
            raise ConfigurationError(
                f"need 0 < height_min <= height_max, got "
                f"[{self.height_min}, {self.height_max}]"
            )
        if self.texture_cells < 1:
            raise ConfigurationError(f"texture_cells must be >= 1, got {self.texture_cells}")
        if not (0.0 < self.shadow_strength <= 1.0):
            raise ConfigurationError(
                f"shadow_strength must be in (0, 1], got {self.shadow_strength}"
            )

    def to_dict(self) -> dict:
        return {
            "size": self.size,
            "buildings_min": self.buildings_min,
            "buildings_max": self.buildings_max,
            "footprint_min": self.footprint_min,
            "footprint_max": self.footprint_max,
            "height_min": self.height_min,
            "height_max": self.height_max,
            "texture_amplitude": self.texture_amplitude,
            "texture_cells": self.texture_cells,
            "shadow_px_per_m": self.shadow_px_per_m,
            "shadow_strength": self.shadow_strength,
        }


@dataclass(frozen=True)
class Building:
    """Axis-aligned rectangle: top-left corner, extent, height, roof color."""

    y0: int
    x0: int
    h: int
    w: int
    height_m: float
    albedo: tuple


def _draw_building(rng: np.random.Generator, cfg: SceneConfig) -> Building:
    h = int(rng.integers(cfg.footprint_min, cfg.footprint_max + 1))
    w = int(rng.integers(cfg.footprint_min, cfg.footprint_max + 1))
    y0 = int(rng.integers(0, cfg.size - h + 1))
    x0 = int(rng.integers(0, cfg.size - w + 1))
    height = float(rng.uniform(cfg.height_min, cfg.height_max))
    albedo = tuple(float(v) for v in rng.uniform(0.2, 0.95, size=3))
    return Building(y0=y0, x0=x0, h=h, w=w, height_m=height, albedo=albedo)


def scene_layout(scene_seed: int, config: SceneConfig) -> list[Building]:
    """The placement log for one scene: every building, in draw order."""
    config.validate()
    rng = np.random.default_rng([int(scene_seed), 1])
    n = int(rng.integers(config.buildings_min, config.buildings_max + 1))
    return [_draw_building(rng, config) for _ in range(n)]


def footprint_union(buildings: list[Building], size: int) -> np.ndarray:
    """Boolean (size, size) raster of pixels covered by any footprint."""
    mask = np.zeros((size, size), dtype=bool)
    for b in buildings:
        mask[b.y0 : b.y0 + b.h, b.x0 : b.x0 + b.w] = True
    return mask


def _upsample_bilinear(grid: np.ndarray, size: int) -> np.ndarray:
    """(n+1, n+1, C) lattice -> (size, size, C) by separable interpolation."""
    n = grid.shape[0] - 1
    t = np.linspace(0.0, n, size)
    i0 = np.clip(np.floor(t).astype(int), 0, n - 1)
    f = (t - i0)[:, None, None]
    rows = grid[i0] * (1 - f) + grid[i0 + 1] * f
    f2 = (t - i0)[None, :, None]
    return rows[:, i0] * (1 - f2) + rows[:, i0 + 1] * f2


def render_scene(
    buildings: list[Building], scene_seed: int, config: SceneConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Render (rgb [0,1], agl meters) for a building layout.

    The ground texture depends only on scene_seed, so re-rendering an edited
    layout over the same seed keeps every unbuilt pixel identical.
    """
    size = config.size
    ground_rng = np.random.default_rng([int(scene_seed), 0])
    base = ground_rng.uniform(0.2, 0.45, size=3)
    lattice = ground_rng.standard_normal((config.texture_cells + 1, config.texture_cells + 1, 3))
    rgb = base[None, None, :] + config.texture_amplitude * _upsample_bilinear(lattice, size)
    rgb = np.clip(rgb, 0.0, 1.0)

    shadow = np.zeros((size, size), dtype=bool)
    for b in buildings:
        length = int(round(b.height_m * config.shadow_px_per_m))
        for t in range(1, length + 1):
            y = b.y0 + t * SUN_STEP[0]
            x = b.x0 + t * SUN_STEP[1]
            y1, x1 = min(y + b.h, size), min(x + b.w, size)
            if y >= size or x >= size:
                break
            shadow[y:y1, x:x1] = True
    rgb[shadow] *= config.shadow_strength

    agl = np.zeros((size, size), dtype=np.float32)
    for b in buildings:
        sl = (slice(b.y0, b.y0 + b.h), slice(b.x0, b.x0 + b.w))
        rgb[sl] = b.albedo
        np.maximum(agl[sl], np.float32(b.height_m), out=agl[sl])
    return rgb.astype(np.float32), agl


def generate_synthetic_scene(
    scene_seed: int, config: SceneConfig, sample_id: str = None
) -> PairedSample:
    """One co-registered RGB / height pair; fully valid (no nodata)."""
    buildings = scene_layout(scene_seed, config)
    rgb, agl = render_scene(buildings, scene_seed, config)
    return PairedSample(
        sample_id=sample_id or f"scene-{scene_seed}",
        rgb=rgb,
        agl=agl[..., None],
        validity=np.ones((config.size, config.size), dtype=bool),
    )


@dataclass
class ChangeConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    add_min: int = 1
    add_max: int = 3
    remove_min: int = 0
    remove_max: int = 2
    retint_probability: float = 0.6
    brightness_jitter: float = 0.08

    def validate(self) -> None:
        self.scene.validate()
        if not (0 <= self.add_min <= self.add_max):
            raise ConfigurationError(f"need 0 <= add_min <= add_max, got [{self.add_min}, {self.add_max}]")
        if not (0 <= self.remove_min <= self.remove_max):
            raise ConfigurationError(
                f"need 0 <= remove_min <= remove_max, got [{self.remove_min}, {self.remove_max}]"
            )
        if not (0.0 <= self.retint_probability <= 1.0):
            raise ConfigurationError(
                f"retint_probability must be in [0, 1], got {self.retint_probability}"
            )
        if self.brightness_jitter < 0:
            raise ConfigurationError(
                f"brightness_jitter must be >= 0, got {self.brightness_jitter}"
            )

    def to_dict(self) -> dict:
        return {
            "scene": self.scene.to_dict(),
            "add_min": self.add_min,
            "add_max": self.add_max,
            "remove_min": self.remove_min,
            "remove_max": self.remove_max,
            "retint_probability": self.retint_probability,
            "brightness_jitter": self.brightness_jitter,
        }


@dataclass
class ChangePlan:
    """Before/after layouts plus the exact edit set, for oracle checks."""

    before: list[Building]
    after: list[Building]
    removed_indices: list[int]
    added: list[Building]


def plan_change(scene_seed: int, change_seed: int, config: ChangeConfig) -> ChangePlan:
    """Decide the structural edits and nuisance re-tints for one pair."""
    config.validate()
    before = scene_layout(scene_seed, config.scene)
    rng = np.random.default_rng([int(scene_seed), int(change_seed), 2])

    n_remove = int(rng.integers(config.remove_min, config.remove_max + 1))
    n_remove = min(n_remove, len(before))
    removed: list[int] = []
    if n_remove > 0:
        removed = sorted(int(i) for i in rng.choice(len(before), size=n_remove, replace=False))
    kept = [b for i, b in enumerate(before) if i not in removed]

    n_add = int(rng.integers(config.add_min, config.add_max + 1))
    added = [_draw_building(rng, config.scene) for _ in range(n_add)]

    if config.retint_probability > 0:
        retinted = []
        for b in kept:
            if rng.uniform() < config.retint_probability:
                albedo = tuple(float(v) for v in rng.uniform(0.2, 0.95, size=3))
                retinted.append(replace(b, albedo=albedo))
            else:
                retinted.append(b)
        kept = retinted

    return ChangePlan(before=before, after=kept + added, removed_indices=removed, added=added)


def generate_synthetic_change(
    scene_seed: int, change_seed: int, config: ChangeConfig, sample_id: str = None
) -> BitemporalSample:
    """Pre/post renderings plus the structural change mask.

    With every edit count at zero, retint_probability 0 and
    brightness_jitter 0, pre and post are bit-identical and the mask is all
    zero.
    """
    plan = plan_change(scene_seed, change_seed, config)
    pre, _ = render_scene(plan.before, scene_seed, config.scene)
    post, _ = render_scene(plan.after, scene_seed, config.scene)

    if config.brightness_jitter > 0:
        jrng = np.random.default_rng([int(scene_seed), int(change_seed), 3])
        gain = 1.0 + config.brightness_jitter * jrng.uniform(-1.0, 1.0, size=3)
        offset = 0.5 * config.brightness_jitter * float(jrng.uniform(-1.0, 1.0))
        post = np.clip(post * gain + offset, 0.0, 1.0).astype(np.float32)

    size = config.scene.size
    mask = footprint_union(plan.before, size) ^ footprint_union(plan.after, size)
    return BitemporalSample(
        sample_id=sample_id or f"change-{scene_seed}-{change_seed}",
        pre=pre,
        post=post,
        mask=mask.astype(np.int64),
        split=None,
    )


def _prepare_out_dir(out_dir, count: int, force: bool) -> Path:
    if count < 1:
        raise ConfigurationError(f"sample count must be >= 1, got {count}")
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()) and not force:
        raise ConfigurationError(
            f"output directory {out} is not empty; pass force to overwrite"
        )
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_paired_dataset(
    out_dir, count: int, config: SceneConfig, seed: int, force: bool = False
) -> int:
    """Write a paired_agl dataset (PNG + float32 TIFF + index.csv)."""
    config.validate()
    out = _prepare_out_dir(out_dir, count, force)
    rows = []
    for i in range(count):
        sid = f"s{i:05d}"
        sample = generate_synthetic_scene(stable_seed(seed, "scene", i), config, sample_id=sid)
        rgb_name, agl_name = f"{sid}_rgb.png", f"{sid}_agl.tif"
        rasters.write_rgb(out / rgb_name, sample.rgb)
        rasters.write_height(out / agl_name, sample.agl[..., 0])
        rows.append([sid, rgb_name, agl_name])
    with open(out / "index.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sample_id", "rgb_path", "agl_path"])
        writer.writerows(rows)
    return count


def write_change_dataset(
    out_dir, count: int, config: ChangeConfig, seed: int, force: bool = False
) -> int:
    """Write a bitemporal_change dataset (pre/post/mask PNGs + index.csv)."""
    config.validate()
    out = _prepare_out_dir(out_dir, count, force)
    rows = []
    for i in range(count):
        sid = f"s{i:05d}"
        sample = generate_synthetic_change(
            stable_seed(seed, "scene", i), stable_seed(seed, "edit", i), config, sample_id=sid
        )
        pre_name, post_name, mask_name = f"{sid}_pre.png", f"{sid}_post.png", f"{sid}_mask.png"
        rasters.write_rgb(out / pre_name, sample.pre)
        rasters.write_rgb(out / post_name, sample.post)
        rasters.write_mask(out / mask_name, sample.mask)
        rows.append([sid, pre_name, post_name, mask_name])
    with open(out / "index.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sample_id", "pre_path", "post_path", "mask_path"])
        writer.writerows(rows)
    return count
