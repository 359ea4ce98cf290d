"""Downstream dense-prediction heads over a (usually frozen) encoder.

Both heads share one U-Net style decoder over the encoder's stage maps:
upsample x2 (nearest), concatenate the skip, then two 3x3 convs + ReLU per
stage. The stem's stride-4 gap back to input resolution is closed by two
more x2-upsample + conv steps (no skips exist below stride 4). The change
detector is siamese: the encoder runs on both dates with shared weights and
each skip is fused as |f_pre - f_post| (or a signed difference behind the
fusion knob) before decoding.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .encoders import EncoderBundle, as_batch_tensor
from .exceptions import (
    ConfigurationError,
    ModalityError,
    NumericalError,
    ShapeError,
)

ARCHITECTURES = ("fc_siam_diff", "unet")
FUSIONS = ("abs_diff", "diff")


@dataclass
class HeadSpec:
    """Decoder architecture choice and sizing."""

    architecture: str
    num_classes: int = 2
    decoder_widths: Optional[tuple] = None  # None mirrors encoder stage widths
    fusion: str = "abs_diff"  # fc_siam_diff only

    def validate(self, num_stages: int) -> None:
        if self.architecture not in ARCHITECTURES:
            raise ConfigurationError(
                f"architecture must be one of {ARCHITECTURES}, got {self.architecture!r}"
            )
        if self.num_classes < 2:
            raise ConfigurationError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.decoder_widths is not None and len(self.decoder_widths) != num_stages:
            raise ConfigurationError(
                f"decoder_widths must list one width per encoder stage "
                f"({num_stages}), got {len(self.decoder_widths)}"
            )
        if self.fusion not in FUSIONS:
            raise ConfigurationError(f"fusion must be one of {FUSIONS}, got {self.fusion!r}")

    def to_dict(self) -> dict:
        return {
            "architecture": self.architecture,
            "num_classes": self.num_classes,
            "decoder_widths": list(self.decoder_widths) if self.decoder_widths else None,
            "fusion": self.fusion,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HeadSpec":
        widths = d.get("decoder_widths")
        return cls(
            architecture=d["architecture"],
            num_classes=d["num_classes"],
            decoder_widths=tuple(widths) if widths else None,
            fusion=d.get("fusion", "abs_diff"),
        )


@dataclass
class SegmentationOutput:
    """Dense prediction: per-pixel logits and the argmax mask."""

    logits: np.ndarray  # (N, H, W, K) float32
    predicted_mask: np.ndarray  # (N, H, W) int64


class _DecoderStage(nn.Module):
    def __init__(self, c_in: int, c_out: int):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)

    def forward(self, x):
        x = F.relu(self.conv1(x), inplace=True)
        return F.relu(self.conv2(x), inplace=True)


class _Decoder(nn.Module):
    """Skip-fed decoder from stride-32 down to full resolution."""

    def __init__(self, skip_widths: tuple, decoder_widths: tuple, num_classes: int):
        super().__init__()
        if len(skip_widths) != len(decoder_widths):
            raise ConfigurationError(
                f"{len(decoder_widths)} decoder widths for {len(skip_widths)} encoder stages"
            )
        n = len(skip_widths)
        stages = []
        for i in reversed(range(n)):  # deepest first
            if i == n - 1:
                c_in = skip_widths[i]
            else:
                c_in = decoder_widths[i + 1] + skip_widths[i]
            stages.append(_DecoderStage(c_in, decoder_widths[i]))
        self.stages = nn.ModuleList(stages)
        w = decoder_widths[0]
        self.refine1 = nn.Conv2d(w, w, 3, padding=1)
        self.refine2 = nn.Conv2d(w, w, 3, padding=1)
        self.classifier = nn.Conv2d(w, num_classes, 1)

    def forward(self, skips: list) -> torch.Tensor:
        x = self.stages[0](skips[-1])
        for stage, skip in zip(list(self.stages)[1:], reversed(skips[:-1])):
            x = F.interpolate(x, scale_factor=2, mode="nearest")
            x = stage(torch.cat([x, skip], dim=1))
        # undo the stem's stride 4
        x = F.interpolate(x, scale_factor=2, mode="nearest")
        x = F.relu(self.refine1(x), inplace=True)
        x = F.interpolate(x, scale_factor=2, mode="nearest")
        x = F.relu(self.refine2(x), inplace=True)
        return self.classifier(x)


def _init_decoder(module: nn.Module, seed: int) -> None:
    gen = torch.Generator()
    gen.manual_seed(seed % (2**63))
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, nn.Conv2d):
                fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1]
                bound = math.sqrt(6.0 / fan_in)
                m.weight.uniform_(-bound, bound, generator=gen)
                if m.bias is not None:
                    b = 1.0 / math.sqrt(fan_in)
                    m.bias.uniform_(-b, b, generator=gen)


class _HeadModel(nn.Module):
    """Shared plumbing: encoder bundle + decoder + checkpoint helpers."""

    def __init__(self, encoder: EncoderBundle, spec: HeadSpec, seed: int):
        super().__init__()
        spec.validate(num_stages=len(encoder.stage_widths))
        widths = spec.decoder_widths or encoder.stage_widths
        self.encoder = encoder
        self.spec = HeadSpec(
            architecture=spec.architecture,
            num_classes=spec.num_classes,
            decoder_widths=tuple(widths),
            fusion=spec.fusion,
        )
        self.decoder = _Decoder(encoder.stage_widths, tuple(widths), spec.num_classes)
        _init_decoder(self.decoder, seed)

    def head_parameters(self):
        return self.decoder.parameters()

    def head_parameter_blobs(self) -> "OrderedDict[str, np.ndarray]":
        out: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for name, p in self.decoder.named_parameters():
            out[name] = p.detach().cpu().numpy().astype(np.float32, copy=True)
        return out

    def load_head_parameter_blobs(self, blobs: dict) -> None:
        with torch.no_grad():
            for name, p in self.decoder.named_parameters():
                if name not in blobs:
                    raise ShapeError(f"missing decoder parameter {name!r} in checkpoint payload")
                arr = blobs[name]
                if tuple(arr.shape) != tuple(p.shape):
                    raise ShapeError(
                        f"decoder parameter {name!r}: checkpoint shape {tuple(arr.shape)} "
                        f"!= model shape {tuple(p.shape)}"
                    )
                p.copy_(torch.from_numpy(np.ascontiguousarray(arr, dtype=np.float32)))

    def _validated(self, patches) -> torch.Tensor:
        x = as_batch_tensor(patches, self.encoder.config.in_channels)
        stride = self.encoder.total_stride
        if x.shape[2] % stride or x.shape[3] % stride:
            raise ShapeError(
                f"input size {x.shape[2]}x{x.shape[3]} must be a multiple of the "
                f"encoder stride {stride}"
            )
        return x


class ChangeDetector(_HeadModel):
    """Siamese change head: shared encoder on both dates, fused skips."""

    def fused_skips(self, pre, post) -> list:
        xa = self._validated(pre)
        xb = self._validated(post)
        if xa.shape != xb.shape:
            raise ShapeError(f"pre {tuple(xa.shape)} and post {tuple(xb.shape)} shapes differ")
        fa = self.encoder.backbone_features(xa).stages
        fb = self.encoder.backbone_features(xb).stages
        if self.spec.fusion == "abs_diff":
            return [torch.abs(a - b) for a, b in zip(fa, fb)]
        return [a - b for a, b in zip(fa, fb)]

    def forward(self, pre, post) -> torch.Tensor:
        return self.decoder(self.fused_skips(pre, post))


class SegmentationNet(_HeadModel):
    """Plain U-Net over the encoder's skip pyramid."""

    def forward(self, image) -> torch.Tensor:
        x = self._validated(image)
        return self.decoder(self.encoder.backbone_features(x).stages)


def build_change_model(encoder: EncoderBundle, spec: HeadSpec, seed: int = 0) -> ChangeDetector:
    if encoder.modality != "rgb":
        raise ModalityError(f"change detection consumes RGB encoders, got {encoder.modality!r}")
    if spec.architecture != "fc_siam_diff":
        raise ConfigurationError(
            f"build_change_model requires architecture 'fc_siam_diff', got {spec.architecture!r}"
        )
    return ChangeDetector(encoder, spec, seed)


def build_segmentation_model(
    encoder: EncoderBundle, spec: HeadSpec, seed: int = 0
) -> SegmentationNet:
    if encoder.modality != "rgb":
        raise ModalityError(f"segmentation consumes RGB encoders, got {encoder.modality!r}")
    if spec.architecture != "unet":
        raise ConfigurationError(
            f"build_segmentation_model requires architecture 'unet', got {spec.architecture!r}"
        )
    return SegmentationNet(encoder, spec, seed)


def predict(model: _HeadModel, inputs) -> SegmentationOutput:
    """Run inference. Change models take a (pre, post) tuple, U-Net one array.

    Ties in the per-pixel argmax resolve to the lowest class index.
    """
    was_training = model.training
    encoder_was_training = model.encoder.net.training
    model.eval()
    model.encoder.set_training(False)
    try:
        with torch.no_grad():
            if isinstance(model, ChangeDetector):
                if not (isinstance(inputs, (tuple, list)) and len(inputs) == 2):
                    raise ShapeError("change model inference needs a (pre, post) pair")
                logits = model(inputs[0], inputs[1])
            else:
                logits = model(inputs)
    finally:
        model.train(was_training)
        model.encoder.set_training(encoder_was_training)
    arr = logits.permute(0, 2, 3, 1).contiguous().cpu().numpy().astype(np.float32)
    if not np.isfinite(arr).all():
        raise NumericalError("non-finite logits from segmentation head")
    mask = np.argmax(arr, axis=-1).astype(np.int64)  # np.argmax: first max wins
    return SegmentationOutput(logits=arr, predicted_mask=mask)
