"""Dataset access: layouts, loaders, patch extraction, synthetic generation."""

from .layout import (
    Dataset,
    DatasetDescriptor,
    SampleRecord,
    index_dataset,
    load_bitemporal,
    load_mono,
    load_pair,
    sniff_kind,
    split_dataset,
)
from .patches import PatchSpec, extract_patches
from .rasters import NODATA
from .samples import BitemporalSample, MonoSample, PairedSample
from .synthetic import (
    Building,
    ChangeConfig,
    ChangePlan,
    SceneConfig,
    footprint_union,
    generate_synthetic_change,
    generate_synthetic_scene,
    plan_change,
    render_scene,
    scene_layout,
    write_change_dataset,
    write_paired_dataset,
)

__all__ = [
    "Dataset",
    "DatasetDescriptor",
    "SampleRecord",
    "index_dataset",
    "split_dataset",
    "load_pair",
    "load_bitemporal",
    "load_mono",
    "sniff_kind",
    "PatchSpec",
    "extract_patches",
    "NODATA",
    "PairedSample",
    "BitemporalSample",
    "MonoSample",
    "Building",
    "SceneConfig",
    "ChangeConfig",
    "ChangePlan",
    "scene_layout",
    "footprint_union",
    "render_scene",
    "plan_change",
    "generate_synthetic_scene",
    "generate_synthetic_change",
    "write_paired_dataset",
    "write_change_dataset",
]
