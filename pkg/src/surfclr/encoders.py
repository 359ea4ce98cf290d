"""Dual-modality convolutional encoders.

An encoder is a residual backbone plus a small projection MLP. The RGB and
height-map encoders share one architecture and differ only in input channel
count; both emit L2-normalized embedding vectors. Weight init is driven by an
explicit torch.Generator so two builds from the same (config, seed) are
bit-identical.
"""

from __future__ import annotations

import hashlib
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .exceptions import (
    ConfigurationError,
    ContractError,
    InputError,
    NumericalError,
    ShapeError,
)

MODALITY_CHANNELS = {"rgb": 3, "agl": 1}
MIN_INPUT_SIZE = 32


@dataclass(frozen=True)
class BackbonePlan:
    """Residual backbone layout: per-stage output widths and block depths."""

    name: str = "resnet18"
    stage_widths: tuple[int, ...] = (64, 128, 256, 512)
    stage_depths: tuple[int, ...] = (2, 2, 2, 2)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "stage_widths": list(self.stage_widths),
            "stage_depths": list(self.stage_depths),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BackbonePlan":
        return cls(
            name=d["name"],
            stage_widths=tuple(d["stage_widths"]),
            stage_depths=tuple(d["stage_depths"]),
        )


def scaled_width(width: int, multiplier: float) -> int:
    return max(1, int(round(width * multiplier)))


@dataclass
class EncoderConfig:
    """Architecture hyperparameters for one encoder.

    in_channels may be left as None, in which case it follows the modality
    (rgb -> 3, agl -> 1). feature_dim is the unscaled backbone output width
    and must equal the last stage width of the plan; width_multiplier scales
    every stage (and therefore the actual feature width) uniformly.
    """

    modality: str
    in_channels: Optional[int] = None
    backbone_plan: BackbonePlan = field(default_factory=BackbonePlan)
    feature_dim: int = 512
    projection_hidden_dim: int = 512
    projection_dim: int = 128
    width_multiplier: float = 1.0

    def __post_init__(self):
        if self.in_channels is None and self.modality in MODALITY_CHANNELS:
            self.in_channels = MODALITY_CHANNELS[self.modality]

    def validate(self) -> None:
        if self.modality not in MODALITY_CHANNELS:
            raise ConfigurationError(
                f"modality must be one of {sorted(MODALITY_CHANNELS)}, got {self.modality!r}"
            )
        expected = MODALITY_CHANNELS[self.modality]
        if self.in_channels != expected:
            raise ConfigurationError(
                f"in_channels for modality {self.modality!r} must be {expected}, got {self.in_channels}"
            )
        for name in ("feature_dim", "projection_hidden_dim", "projection_dim"):
            value = getattr(self, name)
            if not isinstance(value, int) or value <= 0:
                raise ConfigurationError(f"{name} must be a positive integer, got {value!r}")
        if self.projection_dim < 2:
            raise ConfigurationError(f"projection_dim must be >= 2, got {self.projection_dim}")
        if not (self.width_multiplier > 0):
            raise ConfigurationError(
                f"width_multiplier must be > 0, got {self.width_multiplier!r}"
            )
        plan = self.backbone_plan
        if len(plan.stage_widths) != len(plan.stage_depths) or not plan.stage_widths:
            raise ConfigurationError("backbone plan stage widths/depths must be non-empty and equal length")
        if self.feature_dim != plan.stage_widths[-1]:
            raise ConfigurationError(
                f"feature_dim ({self.feature_dim}) must equal the last stage width "
                f"of the backbone plan ({plan.stage_widths[-1]})"
            )

    @property
    def effective_stage_widths(self) -> tuple[int, ...]:
        return tuple(scaled_width(w, self.width_multiplier) for w in self.backbone_plan.stage_widths)

    @property
    def effective_feature_dim(self) -> int:
        return self.effective_stage_widths[-1]

    @property
    def total_stride(self) -> int:
        # stem stride 4, each stage after the first halves resolution
        return 4 * 2 ** (len(self.backbone_plan.stage_widths) - 1)

    def to_dict(self) -> dict:
        return {
            "modality": self.modality,
            "in_channels": self.in_channels,
            "backbone_plan": self.backbone_plan.to_dict(),
            "feature_dim": self.feature_dim,
            "projection_hidden_dim": self.projection_hidden_dim,
            "projection_dim": self.projection_dim,
            "width_multiplier": self.width_multiplier,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(
            modality=d["modality"],
            in_channels=d["in_channels"],
            backbone_plan=BackbonePlan.from_dict(d["backbone_plan"]),
            feature_dim=d["feature_dim"],
            projection_hidden_dim=d["projection_hidden_dim"],
            projection_dim=d["projection_dim"],
            width_multiplier=d["width_multiplier"],
        )


@dataclass
class EmbeddingBatch:
    """A batch of unit-norm embedding vectors for one modality."""

    modality: str
    vectors: torch.Tensor  # (N, D), rows L2-normalized
    sample_ids: list[str]

    def __post_init__(self):
        if self.vectors.ndim != 2 or self.vectors.shape[0] < 1:
            raise ShapeError(f"embedding vectors must be (N>=1, D), got {tuple(self.vectors.shape)}")
        if len(self.sample_ids) != self.vectors.shape[0]:
            raise ShapeError(
                f"{len(self.sample_ids)} sample ids for {self.vectors.shape[0]} embedding rows"
            )
        norms = self.vectors.detach().norm(dim=1)
        worst = float((norms - 1.0).abs().max())
        if not math.isfinite(worst):
            raise NumericalError("non-finite embedding vectors")
        if worst > 1e-5:
            raise ContractError(f"embedding rows must be unit-norm to 1e-5, worst deviation {worst:.3e}")

    def __len__(self) -> int:
        return self.vectors.shape[0]


@dataclass
class FeaturePyramid:
    """Backbone stage maps (shallow to deep, NCHW) plus the pooled vector."""

    stages: list[torch.Tensor]
    pooled: torch.Tensor


class _BasicBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, stride: int):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_out, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, stride=1, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(c_out)
        if stride != 1 or c_in != c_out:
            self.downsample = nn.Sequential(
                nn.Conv2d(c_in, c_out, 1, stride=stride, bias=False),
                nn.BatchNorm2d(c_out),
            )
        else:
            self.downsample = None

    def forward(self, x):
        identity = x if self.downsample is None else self.downsample(x)
        out = F.relu(self.bn1(self.conv1(x)), inplace=True)
        out = self.bn2(self.conv2(out))
        return F.relu(out + identity, inplace=True)


class _Backbone(nn.Module):
    def __init__(self, in_channels: int, config: EncoderConfig):
        super().__init__()
        widths = config.effective_stage_widths
        depths = config.backbone_plan.stage_depths
        stem_width = widths[0]
        self.stem = nn.Sequential(
            nn.Conv2d(in_channels, stem_width, 7, stride=2, padding=3, bias=False),
            nn.BatchNorm2d(stem_width),
            nn.ReLU(inplace=True),
            nn.MaxPool2d(3, stride=2, padding=1),
        )
        stages = []
        c_in = stem_width
        for i, (width, depth) in enumerate(zip(widths, depths)):
            blocks = []
            for b in range(depth):
                stride = 2 if (i > 0 and b == 0) else 1
                blocks.append(_BasicBlock(c_in, width, stride))
                c_in = width
            stages.append(nn.Sequential(*blocks))
        self.stages = nn.ModuleList(stages)

    def forward(self, x) -> FeaturePyramid:
        x = self.stem(x)
        maps = []
        for stage in self.stages:
            x = stage(x)
            maps.append(x)
        pooled = F.adaptive_avg_pool2d(x, 1).flatten(1)
        return FeaturePyramid(stages=maps, pooled=pooled)


class _EncoderNet(nn.Module):
    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.backbone = _Backbone(config.in_channels, config)
        self.projection = nn.Sequential(
            nn.Linear(config.effective_feature_dim, config.projection_hidden_dim),
            nn.ReLU(inplace=True),
            nn.Linear(config.projection_hidden_dim, config.projection_dim),
        )


def _init_parameters(net: nn.Module, seed: int) -> None:
    """He-uniform conv/linear init, BN to identity, driven by one generator.

    Iterates modules in definition order so the same (config, seed) always
    replays the same random stream.
    """
    gen = torch.Generator()
    gen.manual_seed(seed % (2**63))
    with torch.no_grad():
        for module in net.modules():
            if isinstance(module, nn.Conv2d):
                fan_in = module.in_channels * module.kernel_size[0] * module.kernel_size[1]
                bound = math.sqrt(6.0 / fan_in)
                module.weight.uniform_(-bound, bound, generator=gen)
                if module.bias is not None:
                    module.bias.zero_()
            elif isinstance(module, nn.Linear):
                fan_in = module.in_features
                bound = math.sqrt(6.0 / fan_in)
                module.weight.uniform_(-bound, bound, generator=gen)
                if module.bias is not None:
                    b = 1.0 / math.sqrt(fan_in)
                    module.bias.uniform_(-b, b, generator=gen)
            elif isinstance(module, (nn.BatchNorm2d, nn.BatchNorm1d)):
                module.weight.fill_(1.0)
                module.bias.zero_()
                module.reset_running_stats()


def as_batch_tensor(patches, in_channels: int, min_size: int = MIN_INPUT_SIZE) -> torch.Tensor:
    """Coerce input patches to a float32 NCHW tensor.

    numpy input is channels-last (HWC or NHWC); torch input is channels-first
    (CHW or NCHW). Raises ShapeError/InputError on contract violations.
    """
    if isinstance(patches, np.ndarray):
        arr = patches
        if arr.ndim == 3:
            arr = arr[None]
        if arr.ndim != 4:
            raise ShapeError(f"expected HWC or NHWC array, got ndim={patches.ndim}")
        if arr.shape[-1] != in_channels:
            raise ShapeError(
                f"expected {in_channels} channels in the last axis, got {arr.shape[-1]}"
            )
        x = torch.from_numpy(np.ascontiguousarray(arr, dtype=np.float32)).permute(0, 3, 1, 2)
    elif isinstance(patches, torch.Tensor):
        x = patches
        if x.ndim == 3:
            x = x[None]
        if x.ndim != 4:
            raise ShapeError(f"expected CHW or NCHW tensor, got ndim={patches.ndim}")
        if x.shape[1] != in_channels:
            raise ShapeError(f"expected {in_channels} channels in axis 1, got {x.shape[1]}")
        x = x.to(torch.float32)
    else:
        raise ShapeError(f"unsupported patch container {type(patches).__name__}")
    n, _, h, w = x.shape
    if n < 1:
        raise ShapeError("empty batch")
    if h < min_size or w < min_size:
        raise ShapeError(f"patches must be at least {min_size}x{min_size}, got {h}x{w}")
    if not torch.isfinite(x).all():
        raise InputError("non-finite values in input patches")
    return x


class EncoderBundle:
    """One encoder: config, torch module, and a freeze flag.

    Frozen bundles run in eval mode (BatchNorm uses running statistics), all
    parameters have requires_grad=False, and forward passes execute under
    no_grad. Checkpointing works on parameter_blobs(): float32 arrays for
    every parameter and every float buffer, keyed by qualified name.
    """

    def __init__(self, config: EncoderConfig, net: nn.Module, frozen: bool = False):
        self.config = config
        self.net = net
        self._frozen = False
        self.set_frozen(frozen)
        if not frozen:
            self.net.eval()  # callers opt in to train mode explicitly

    # -- freezing ---------------------------------------------------------

    @property
    def frozen(self) -> bool:
        return self._frozen

    def set_frozen(self, flag: bool) -> None:
        self._frozen = bool(flag)
        for p in self.net.parameters():
            p.requires_grad_(not self._frozen)
        if self._frozen:
            self.net.eval()

    def set_training(self, flag: bool) -> None:
        """Toggle train/eval mode; frozen bundles stay in eval mode."""
        if self._frozen:
            self.net.eval()
        else:
            self.net.train(bool(flag))

    # -- introspection ----------------------------------------------------

    @property
    def modality(self) -> str:
        return self.config.modality

    @property
    def feature_dim(self) -> int:
        return self.config.effective_feature_dim

    @property
    def stage_widths(self) -> tuple[int, ...]:
        return self.config.effective_stage_widths

    @property
    def total_stride(self) -> int:
        return self.config.total_stride

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.net.parameters())

    def _named_tensors(self):
        for name, p in self.net.named_parameters():
            yield name, p
        for name, b in self.net.named_buffers():
            if name.endswith("num_batches_tracked"):
                continue  # int64 counter, no effect at fixed momentum
            yield name, b

    def parameter_blobs(self) -> "OrderedDict[str, np.ndarray]":
        out: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for name, t in self._named_tensors():
            out[name] = t.detach().cpu().numpy().astype(np.float32, copy=True)
        return out

    def load_parameter_blobs(self, blobs: dict) -> None:
        with torch.no_grad():
            for name, t in self._named_tensors():
                if name not in blobs:
                    raise ShapeError(f"missing parameter {name!r} in checkpoint payload")
                arr = blobs[name]
                if tuple(arr.shape) != tuple(t.shape):
                    raise ShapeError(
                        f"parameter {name!r}: checkpoint shape {tuple(arr.shape)} "
                        f"!= model shape {tuple(t.shape)}"
                    )
                t.copy_(torch.from_numpy(np.ascontiguousarray(arr, dtype=np.float32)))

    def content_hashes(self) -> dict[str, str]:
        return {
            name: hashlib.sha256(blob.tobytes()).hexdigest()
            for name, blob in self.parameter_blobs().items()
        }

    # -- forward passes ---------------------------------------------------

    def _forward_pyramid(self, x: torch.Tensor) -> FeaturePyramid:
        if self._frozen:
            with torch.no_grad():
                return self.net.backbone(x)
        return self.net.backbone(x)

    def backbone_features(self, patches) -> FeaturePyramid:
        x = as_batch_tensor(patches, self.config.in_channels)
        return self._forward_pyramid(x)

    def encode(self, patches, sample_ids: Optional[Sequence[str]] = None) -> EmbeddingBatch:
        x = as_batch_tensor(patches, self.config.in_channels)
        pyramid = self._forward_pyramid(x)
        if self._frozen:
            with torch.no_grad():
                z = self.net.projection(pyramid.pooled)
                z = F.normalize(z, dim=1)
        else:
            z = self.net.projection(pyramid.pooled)
            z = F.normalize(z, dim=1)
        n = z.shape[0]
        if sample_ids is None:
            ids = [str(i) for i in range(n)]
        else:
            ids = [str(s) for s in sample_ids]
            if len(ids) != n:
                raise ShapeError(f"{len(ids)} sample ids for a batch of {n}")
        return EmbeddingBatch(modality=self.config.modality, vectors=z, sample_ids=ids)


def build_encoder(config: EncoderConfig, seed: int) -> EncoderBundle:
    """Construct and deterministically initialize one encoder."""
    config.validate()
    net = _EncoderNet(config)
    _init_parameters(net, seed)
    return EncoderBundle(config=config, net=net, frozen=False)
