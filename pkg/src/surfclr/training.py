"""Training loops: contrastive pretraining and frozen-encoder fine-tuning.

Every run writes into its own directory: config.json (echo of the resolved
configuration), log.jsonl (one row per epoch), runrecord.json, and
ckpt-* checkpoint directories. Determinism policy: sample order, patch
windows and weight init all derive from explicit seeds; nothing reads global
RNG state, so one (seed, dataset, config) triple always produces the same
sequence of logged losses.
"""

from __future__ import annotations

import json
import math
import random
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F

from .contrastive import Temperature, nt_xent, retrieval_accuracy
from .checkpoint import save_checkpoint
from .data.layout import Dataset, split_dataset
from .data.patches import PatchSpec, extract_patches
from .data.samples import BitemporalSample, MonoSample, PairedSample
from .encoders import EncoderBundle, as_batch_tensor
from .exceptions import ConfigurationError, ContractError, NumericalError
from .heads import HeadSpec, build_change_model, build_segmentation_model, predict
from .metrics import ConfusionMatrix, MetricsReport, accumulate, compute_report
from .seeding import stable_seed

PHASES = ("pretrain", "finetune")
DEFAULT_EPOCHS = {"pretrain": 500, "finetune": 25}
OPTIMIZERS = ("adamw",)


@dataclass
class TrainConfig:
    """Optimization settings shared by both phases.

    epochs=None resolves to the phase default (500 pretrain, 25 finetune).
    patch_size=None trains on full images. negatives/tau_* only matter for
    pretraining.
    """

    phase: str
    batch_size: int = 16
    epochs: Optional[int] = None
    learning_rate: float = 1e-3
    weight_decay: float = 0.01
    optimizer: str = "adamw"
    seed: int = 0
    val_fraction: float = 0.2
    checkpoint_every: Optional[int] = None
    grad_clip_norm: Optional[float] = None
    negatives: str = "all"
    tau_init: float = 0.07
    tau_min: float = 0.01
    tau_max: float = 1.0
    patch_size: Optional[int] = None
    patch_strategy: str = "random_crop"
    patches_per_image: int = 1
    eval_batch_size: Optional[int] = None

    @property
    def resolved_epochs(self) -> int:
        return DEFAULT_EPOCHS[self.phase] if self.epochs is None else self.epochs

    @property
    def resolved_eval_batch_size(self) -> int:
        return self.eval_batch_size or self.batch_size

    def validate(self) -> None:
        if self.phase not in PHASES:
            raise ConfigurationError(f"phase must be one of {PHASES}, got {self.phase!r}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs is not None and self.epochs < 0:
            raise ConfigurationError(f"epochs must be >= 0, got {self.epochs}")
        if not (self.learning_rate > 0):
            raise ConfigurationError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.weight_decay < 0:
            raise ConfigurationError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigurationError(
                f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}"
            )
        if not (0.0 < self.val_fraction < 1.0):
            raise ConfigurationError(f"val_fraction must be in (0, 1), got {self.val_fraction}")
        if self.checkpoint_every is not None and self.checkpoint_every < 1:
            raise ConfigurationError(
                f"checkpoint_every must be >= 1, got {self.checkpoint_every}"
            )
        if self.grad_clip_norm is not None and self.grad_clip_norm <= 0:
            raise ConfigurationError(f"grad_clip_norm must be > 0, got {self.grad_clip_norm}")

    def to_dict(self) -> dict:
        return {
            "phase": self.phase,
            "batch_size": self.batch_size,
            "epochs": self.resolved_epochs,
            "learning_rate": self.learning_rate,
            "weight_decay": self.weight_decay,
            "optimizer": self.optimizer,
            "seed": self.seed,
            "val_fraction": self.val_fraction,
            "checkpoint_every": self.checkpoint_every,
            "grad_clip_norm": self.grad_clip_norm,
            "negatives": self.negatives,
            "tau_init": self.tau_init,
            "tau_min": self.tau_min,
            "tau_max": self.tau_max,
            "patch_size": self.patch_size,
            "patch_strategy": self.patch_strategy,
            "patches_per_image": self.patches_per_image,
            "eval_batch_size": self.eval_batch_size,
        }


@dataclass
class RunRecord:
    """Everything a finished (or in-progress) run reports back."""

    run_id: str
    phase: str
    config: dict
    epochs: list = field(default_factory=list)
    wall_clock_seconds: float = 0.0
    final_checkpoint: Optional[str] = None
    best_checkpoint: Optional[str] = None
    best_epoch: Optional[int] = None

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "phase": self.phase,
            "config": self.config,
            "epochs": self.epochs,
            "wall_clock_seconds": self.wall_clock_seconds,
            "final_checkpoint": self.final_checkpoint,
            "best_checkpoint": self.best_checkpoint,
            "best_epoch": self.best_epoch,
        }


# -- shared plumbing --------------------------------------------------------


def _chunks(seq: list, size: int):
    for i in range(0, len(seq), size):
        yield seq[i : i + size]


def _epoch_patches(samples: list, config: TrainConfig, epoch_tag) -> list:
    if config.patch_size is None:
        return samples
    spec = PatchSpec(
        size=config.patch_size,
        strategy=config.patch_strategy,
        patches_per_image=config.patches_per_image,
        seed=stable_seed(config.seed, "patch", epoch_tag),
    )
    out = []
    for s in samples:
        out.extend(extract_patches(s, spec))
    return out


def paired_batch_tensors(patches: list, h_max: float):
    """Stack paired patches into model-ready tensors; AGL scaled to [0, 1]."""
    rgb = np.stack([p.rgb for p in patches]).astype(np.float32)
    agl = np.stack([p.agl for p in patches]).astype(np.float32) / float(h_max)
    ids = [p.sample_id for p in patches]
    return as_batch_tensor(rgb, 3), as_batch_tensor(agl, 1), ids


def contrastive_batch_loss(
    rgb_encoder: EncoderBundle,
    agl_encoder: EncoderBundle,
    temperature: Temperature,
    x_rgb: torch.Tensor,
    x_agl: torch.Tensor,
    ids: list,
    negatives: str = "all",
):
    """One forward pass of the symmetric loss; shared by train and replay."""
    zr = rgb_encoder.encode(x_rgb, ids)
    za = agl_encoder.encode(x_agl, ids)
    return nt_xent(zr, za, temperature, negatives=negatives)


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


class _RunLogger:
    def __init__(self, run_dir: Path):
        self.path = run_dir / "log.jsonl"
        self.path.write_text("")

    def append(self, row: dict) -> None:
        with open(self.path, "a") as fh:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def _load_all(dataset: Dataset, records: list) -> list:
    return [dataset.load(r) for r in records]


# -- contrastive pretraining -------------------------------------------------


def _pretrain_validation(
    rgb_encoder: EncoderBundle,
    agl_encoder: EncoderBundle,
    temperature: Temperature,
    val_batches: list,
    config: TrainConfig,
) -> dict:
    rgb_encoder.set_training(False)
    agl_encoder.set_training(False)
    loss_sum = 0.0
    top1_sum = 0.0
    n_total = 0
    n_retrieval = 0
    with torch.no_grad():
        for x_rgb, x_agl, ids in val_batches:
            n = len(ids)
            zr = rgb_encoder.encode(x_rgb, ids)
            za = agl_encoder.encode(x_agl, ids)
            breakdown = nt_xent(zr, za, temperature, negatives=config.negatives)
            loss_sum += breakdown.total_value * n
            n_total += n
            if n >= 2:
                a2b, b2a = retrieval_accuracy(zr, za, k=1)
                top1_sum += 0.5 * (a2b + b2a) * n
                n_retrieval += n
    return {
        "val_loss": loss_sum / n_total if n_total else None,
        "val_top1": top1_sum / n_retrieval if n_retrieval else None,
    }


def pretrain(
    rgb_encoder: EncoderBundle,
    agl_encoder: EncoderBundle,
    dataset: Dataset,
    config: TrainConfig,
    run_dir,
    config_echo: Optional[dict] = None,
) -> tuple[EncoderBundle, EncoderBundle, Temperature, RunRecord]:
    """Joint contrastive training of both encoders plus the temperature."""
    config.validate()
    if config.phase != "pretrain":
        raise ConfigurationError(f"pretrain() passed a config with phase {config.phase!r}")
    if rgb_encoder.frozen or agl_encoder.frozen:
        raise ContractError("pretraining requires unfrozen encoders")
    if rgb_encoder.modality != "rgb" or agl_encoder.modality != "agl":
        raise ConfigurationError(
            f"pretrain expects (rgb, agl) encoders, got "
            f"({rgb_encoder.modality!r}, {agl_encoder.modality!r})"
        )
    if dataset.descriptor.kind != "paired_agl":
        raise ConfigurationError(
            f"pretraining needs a paired_agl dataset, got {dataset.descriptor.kind!r}"
        )

    torch.set_num_threads(1)  # fixed reduction order, identical losses across hosts
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    train_recs, val_recs = split_dataset(dataset.records, config.val_fraction, config.seed)
    if not train_recs:
        raise ConfigurationError("train split is empty")

    h_max = dataset.descriptor.h_max
    temperature = Temperature(config.tau_init, config.tau_min, config.tau_max)
    params = (
        list(rgb_encoder.net.parameters())
        + list(agl_encoder.net.parameters())
        + [temperature.log_tau]
    )
    optimizer = torch.optim.AdamW(
        params, lr=config.learning_rate, weight_decay=config.weight_decay
    )

    record = RunRecord(run_id=run_dir.name, phase="pretrain", config=config.to_dict())
    _write_json(run_dir / "config.json", config_echo or {"train": config.to_dict()})
    logger = _RunLogger(run_dir)

    train_samples = _load_all(dataset, train_recs)
    val_samples = _load_all(dataset, val_recs)
    # validation uses one fixed set of windows across all epochs
    val_patched = _epoch_patches(val_samples, config, "val")
    val_batches = [
        paired_batch_tensors(chunk, h_max)
        for chunk in _chunks(val_patched, config.resolved_eval_batch_size)
    ]

    order_rng = random.Random(stable_seed(config.seed, "order"))
    best_top1 = -1.0
    t_start = time.monotonic()

    for epoch in range(1, config.resolved_epochs + 1):
        t_epoch = time.monotonic()
        rgb_encoder.set_training(True)
        agl_encoder.set_training(True)
        epoch_samples = list(train_samples)
        order_rng.shuffle(epoch_samples)
        patched = _epoch_patches(epoch_samples, config, epoch)
        loss_sum, n_seen = 0.0, 0
        for chunk in _chunks(patched, config.batch_size):
            x_rgb, x_agl, ids = paired_batch_tensors(chunk, h_max)
            breakdown = contrastive_batch_loss(
                rgb_encoder, agl_encoder, temperature, x_rgb, x_agl, ids, config.negatives
            )
            loss = breakdown.total
            value = float(loss.detach())
            if not math.isfinite(value):
                raise NumericalError(
                    f"non-finite contrastive loss at epoch {epoch} "
                    f"(tau={breakdown.tau_used:.5f}, batch={ids})"
                )
            optimizer.zero_grad()
            loss.backward()
            if config.grad_clip_norm is not None:
                torch.nn.utils.clip_grad_norm_(params, config.grad_clip_norm)
            optimizer.step()
            loss_sum += value * len(ids)
            n_seen += len(ids)

        row = {"epoch": epoch, "train_loss": loss_sum / n_seen, "tau": temperature.value}
        row.update(_pretrain_validation(rgb_encoder, agl_encoder, temperature, val_batches, config))
        row["seconds"] = round(time.monotonic() - t_epoch, 3)
        logger.append(row)
        record.epochs.append(row)

        state = {"phase": "pretrain", "epoch": epoch, "seed": config.seed, "run_id": record.run_id}
        if config.checkpoint_every and epoch % config.checkpoint_every == 0:
            save_checkpoint(
                run_dir / f"ckpt-{epoch}",
                encoders={"rgb": rgb_encoder, "agl": agl_encoder},
                temperature=temperature,
                run_state=state,
            )
        if row["val_top1"] is not None and row["val_top1"] > best_top1:
            best_top1 = row["val_top1"]
            record.best_epoch = epoch
            record.best_checkpoint = str(run_dir / "ckpt-best")
            save_checkpoint(
                run_dir / "ckpt-best",
                encoders={"rgb": rgb_encoder, "agl": agl_encoder},
                temperature=temperature,
                run_state=state,
            )

    final_state = {
        "phase": "pretrain",
        "epoch": config.resolved_epochs,
        "seed": config.seed,
        "run_id": record.run_id,
    }
    save_checkpoint(
        run_dir / "ckpt-final",
        encoders={"rgb": rgb_encoder, "agl": agl_encoder},
        temperature=temperature,
        run_state=final_state,
    )
    record.final_checkpoint = str(run_dir / "ckpt-final")
    record.wall_clock_seconds = round(time.monotonic() - t_start, 3)
    _write_json(run_dir / "runrecord.json", record.to_dict())
    return rgb_encoder, agl_encoder, temperature, record


# -- frozen-encoder fine-tuning ----------------------------------------------


def _finetune_tensors(patches: list):
    first = patches[0]
    if isinstance(first, BitemporalSample):
        pre = as_batch_tensor(np.stack([p.pre for p in patches]), 3)
        post = as_batch_tensor(np.stack([p.post for p in patches]), 3)
        mask = torch.from_numpy(np.stack([p.mask for p in patches]).astype(np.int64))
        return (pre, post), mask
    if isinstance(first, MonoSample):
        img = as_batch_tensor(np.stack([p.image for p in patches]), 3)
        mask = torch.from_numpy(np.stack([p.mask for p in patches]).astype(np.int64))
        return (img,), mask
    raise ConfigurationError(f"cannot fine-tune on {type(first).__name__} samples")


def _model_logits(model, inputs: tuple) -> torch.Tensor:
    return model(*inputs)


def evaluate_samples(
    model, samples: list, num_classes: int, batch_size: int = 16
) -> tuple[MetricsReport, ConfusionMatrix]:
    """Confusion-matrix metrics of a model over already-loaded samples."""
    cm = ConfusionMatrix(num_classes)
    for chunk in _chunks(samples, batch_size):
        inputs, mask = _finetune_tensors(chunk)
        out = predict(model, inputs if len(inputs) == 2 else inputs[0])
        accumulate(cm, mask.numpy(), out.predicted_mask)
    return compute_report(cm), cm


_KIND_FOR_ARCH = {"fc_siam_diff": "bitemporal_change", "unet": "mono_segmentation"}


def finetune(
    encoder: EncoderBundle,
    head_spec: HeadSpec,
    dataset: Dataset,
    config: TrainConfig,
    run_dir,
    config_echo: Optional[dict] = None,
):
    """Train a decoder head over a frozen encoder; encoder bytes must not move."""
    config.validate()
    if config.phase != "finetune":
        raise ConfigurationError(f"finetune() passed a config with phase {config.phase!r}")
    if not encoder.frozen:
        raise ContractError("fine-tuning requires a frozen encoder (call set_frozen(True))")
    expected_kind = _KIND_FOR_ARCH[head_spec.architecture] if head_spec.architecture in _KIND_FOR_ARCH else None
    if expected_kind is None or dataset.descriptor.kind != expected_kind:
        raise ConfigurationError(
            f"head {head_spec.architecture!r} trains on {expected_kind!r} datasets, "
            f"got {dataset.descriptor.kind!r}"
        )
    if head_spec.num_classes != dataset.descriptor.num_classes:
        raise ConfigurationError(
            f"head num_classes {head_spec.num_classes} != dataset num_classes "
            f"{dataset.descriptor.num_classes}"
        )

    torch.set_num_threads(1)  # fixed reduction order, identical losses across hosts
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    train_recs, val_recs = split_dataset(dataset.records, config.val_fraction, config.seed)
    if not train_recs:
        raise ConfigurationError("train split is empty")

    frozen_hashes = encoder.content_hashes()
    if head_spec.architecture == "fc_siam_diff":
        model = build_change_model(encoder, head_spec, seed=stable_seed(config.seed, "head"))
    else:
        model = build_segmentation_model(encoder, head_spec, seed=stable_seed(config.seed, "head"))
    optimizer = torch.optim.AdamW(
        model.head_parameters(), lr=config.learning_rate, weight_decay=config.weight_decay
    )

    record = RunRecord(run_id=run_dir.name, phase="finetune", config=config.to_dict())
    _write_json(run_dir / "config.json", config_echo or {"train": config.to_dict()})
    logger = _RunLogger(run_dir)

    train_samples = _load_all(dataset, train_recs)
    val_samples = _load_all(dataset, val_recs)
    val_patched = _epoch_patches(val_samples, config, "val")
    k = dataset.descriptor.num_classes

    order_rng = random.Random(stable_seed(config.seed, "order"))
    best_miou = -1.0
    t_start = time.monotonic()

    def head_payload():
        return {"head": (model.head_parameter_blobs(), model.spec.to_dict())}

    for epoch in range(1, config.resolved_epochs + 1):
        t_epoch = time.monotonic()
        model.train()
        epoch_samples = list(train_samples)
        order_rng.shuffle(epoch_samples)
        patched = _epoch_patches(epoch_samples, config, epoch)
        loss_sum, n_seen = 0.0, 0
        for chunk in _chunks(patched, config.batch_size):
            inputs, mask = _finetune_tensors(chunk)
            logits = _model_logits(model, inputs)
            loss = F.cross_entropy(logits, mask)
            value = float(loss.detach())
            if not math.isfinite(value):
                ids = [p.sample_id for p in chunk]
                raise NumericalError(
                    f"non-finite fine-tune loss at epoch {epoch} (batch={ids})"
                )
            optimizer.zero_grad()
            loss.backward()
            if config.grad_clip_norm is not None:
                torch.nn.utils.clip_grad_norm_(list(model.head_parameters()), config.grad_clip_norm)
            optimizer.step()
            loss_sum += value * len(chunk)
            n_seen += len(chunk)

        report, _ = evaluate_samples(model, val_patched, k, config.resolved_eval_batch_size)
        row = {
            "epoch": epoch,
            "train_loss": loss_sum / n_seen,
            "val_miou": report.miou,
            "val_f1": report.f1,
            "val_average_accuracy": report.average_accuracy,
        }
        if k == 2:
            row["val_change_iou"] = report.per_class_iou[1]
        row["seconds"] = round(time.monotonic() - t_epoch, 3)
        logger.append(row)
        record.epochs.append(row)

        state = {"phase": "finetune", "epoch": epoch, "seed": config.seed, "run_id": record.run_id}
        if config.checkpoint_every and epoch % config.checkpoint_every == 0:
            save_checkpoint(
                run_dir / f"ckpt-{epoch}",
                encoders={"encoder": encoder},
                heads=head_payload(),
                run_state=state,
            )
        if report.miou > best_miou:
            best_miou = report.miou
            record.best_epoch = epoch
            record.best_checkpoint = str(run_dir / "ckpt-best")
            save_checkpoint(
                run_dir / "ckpt-best",
                encoders={"encoder": encoder},
                heads=head_payload(),
                run_state=state,
            )

    if encoder.content_hashes() != frozen_hashes:
        raise ContractError("frozen encoder parameters changed during fine-tuning")

    save_checkpoint(
        run_dir / "ckpt-final",
        encoders={"encoder": encoder},
        heads=head_payload(),
        run_state={
            "phase": "finetune",
            "epoch": config.resolved_epochs,
            "seed": config.seed,
            "run_id": record.run_id,
        },
    )
    record.final_checkpoint = str(run_dir / "ckpt-final")
    record.wall_clock_seconds = round(time.monotonic() - t_start, 3)
    _write_json(run_dir / "runrecord.json", record.to_dict())
    return model, record
