"""Training loops at toy scale: determinism, freezing, logging, optimizer."""

import json
import math

import numpy as np
import pytest
import torch

from surfclr import (
    EncoderConfig,
    HeadSpec,
    TrainConfig,
    build_encoder,
    finetune,
    pretrain,
)
from surfclr.checkpoint import load_checkpoint
from surfclr.data import ChangeConfig, Dataset, SceneConfig, write_change_dataset, write_paired_dataset
from surfclr.exceptions import ConfigurationError, ContractError, NumericalError
from surfclr.seeding import stable_seed


def encoder(modality, seed, width=0.125):
    return build_encoder(EncoderConfig(modality=modality, width_multiplier=width), seed)


@pytest.fixture(scope="module")
def paired_ds(tmp_path_factory):
    root = tmp_path_factory.mktemp("paired")
    write_paired_dataset(root / "d", 12, SceneConfig(), seed=3)
    return Dataset.open(root / "d", kind="paired_agl")


@pytest.fixture(scope="module")
def change_ds(tmp_path_factory):
    root = tmp_path_factory.mktemp("change")
    write_change_dataset(root / "d", 10, ChangeConfig(scene=SceneConfig()), seed=3)
    return Dataset.open(root / "d", num_classes=2)


def pretrain_config(**kw):
    base = dict(
        phase="pretrain", epochs=2, batch_size=4, seed=5, patch_size=64,
        learning_rate=1e-3,
    )
    base.update(kw)
    return TrainConfig(**base)


def run_pretrain(ds, run_dir, **kw):
    cfg = pretrain_config(**kw)
    rgb = encoder("rgb", stable_seed(cfg.seed, "rgb_encoder"))
    agl = encoder("agl", stable_seed(cfg.seed, "agl_encoder"))
    return pretrain(rgb, agl, ds, cfg, run_dir)


def test_pretrain_is_reproducible(paired_ds, tmp_path):
    _, _, _, rec1 = run_pretrain(paired_ds, tmp_path / "a")
    _, _, _, rec2 = run_pretrain(paired_ds, tmp_path / "b")
    losses1 = [e["train_loss"] for e in rec1.epochs]
    losses2 = [e["train_loss"] for e in rec2.epochs]
    assert losses1 == losses2
    assert [e["val_loss"] for e in rec1.epochs] == [e["val_loss"] for e in rec2.epochs]
    _, _, _, rec3 = run_pretrain(paired_ds, tmp_path / "c", seed=6)
    assert [e["train_loss"] for e in rec3.epochs] != losses1


def test_pretrain_writes_log_and_checkpoints(paired_ds, tmp_path):
    rgb, agl, temp, rec = run_pretrain(paired_ds, tmp_path / "r", checkpoint_every=1)
    run_dir = tmp_path / "r"
    rows = [json.loads(line) for line in (run_dir / "log.jsonl").read_text().splitlines()]
    assert len(rows) == 2
    for row in rows:
        assert set(row) >= {"epoch", "train_loss", "tau", "val_loss", "val_top1", "seconds"}
    assert (run_dir / "ckpt-final" / "manifest.json").exists()
    assert (run_dir / "ckpt-1" / "manifest.json").exists()
    assert (run_dir / "runrecord.json").exists()
    ck = load_checkpoint(run_dir / "ckpt-final")
    assert ck.encoders["rgb"].content_hashes() == rgb.content_hashes()
    assert ck.temperature.value == pytest.approx(temp.value, abs=1e-7)


def test_pretrain_zero_epochs_saves_initial_state(paired_ds, tmp_path):
    rgb, agl, temp, rec = run_pretrain(paired_ds, tmp_path / "z", epochs=0)
    assert rec.epochs == []
    assert (tmp_path / "z" / "ckpt-final" / "manifest.json").exists()
    assert (tmp_path / "z" / "log.jsonl").read_text() == ""


def test_pretrain_rejects_frozen_encoder(paired_ds, tmp_path):
    cfg = pretrain_config()
    rgb = encoder("rgb", 1)
    agl = encoder("agl", 2)
    rgb.set_frozen(True)
    with pytest.raises(ContractError):
        pretrain(rgb, agl, paired_ds, cfg, tmp_path / "x")


def test_pretrain_rejects_swapped_modalities(paired_ds, tmp_path):
    cfg = pretrain_config()
    with pytest.raises(ConfigurationError):
        pretrain(encoder("agl", 1), encoder("agl", 2), paired_ds, cfg, tmp_path / "x")


def test_pretrain_nonfinite_loss_is_numerical_error(paired_ds, tmp_path):
    # a huge learning rate overflows float32 parameters within two epochs
    with pytest.raises(NumericalError):
        run_pretrain(paired_ds, tmp_path / "x", learning_rate=1e30, epochs=5)


def test_phase_validation():
    with pytest.raises(ConfigurationError):
        TrainConfig(phase="warmup").validate()
    with pytest.raises(ConfigurationError):
        TrainConfig(phase="pretrain", batch_size=0).validate()
    with pytest.raises(ConfigurationError):
        TrainConfig(phase="pretrain", optimizer="sgd").validate()
    with pytest.raises(ConfigurationError):
        TrainConfig(phase="pretrain", val_fraction=1.0).validate()


def finetune_config(**kw):
    base = dict(phase="finetune", epochs=2, batch_size=4, seed=7, learning_rate=1e-3)
    base.update(kw)
    return TrainConfig(**base)


def test_finetune_requires_frozen_encoder(change_ds, tmp_path):
    enc = encoder("rgb", 3)
    with pytest.raises(ContractError):
        finetune(enc, HeadSpec(architecture="fc_siam_diff"), change_ds, finetune_config(), tmp_path / "x")


def test_finetune_keeps_encoder_bit_identical(change_ds, tmp_path):
    enc = encoder("rgb", 4)
    enc.set_frozen(True)
    before = enc.content_hashes()
    model, rec = finetune(
        enc, HeadSpec(architecture="fc_siam_diff"), change_ds, finetune_config(), tmp_path / "r"
    )
    assert enc.content_hashes() == before
    assert len(rec.epochs) == 2
    for row in rec.epochs:
        assert set(row) >= {"epoch", "train_loss", "val_miou", "val_f1", "val_change_iou"}
    assert (tmp_path / "r" / "ckpt-final" / "manifest.json").exists()


def test_finetune_is_reproducible(change_ds, tmp_path):
    def one(run):
        enc = encoder("rgb", 5)
        enc.set_frozen(True)
        _, rec = finetune(
            enc, HeadSpec(architecture="fc_siam_diff"), change_ds, finetune_config(), tmp_path / run
        )
        return [e["train_loss"] for e in rec.epochs], [e["val_miou"] for e in rec.epochs]

    a, b = one("a"), one("b")
    assert a == b


def test_finetune_architecture_dataset_mismatch(change_ds, tmp_path):
    enc = encoder("rgb", 6)
    enc.set_frozen(True)
    with pytest.raises(ConfigurationError):
        finetune(enc, HeadSpec(architecture="unet"), change_ds, finetune_config(), tmp_path / "x")


def test_adamw_applies_decoupled_decay():
    # zero gradient + step must shrink the weight by exactly lr * wd * w
    p = torch.nn.Parameter(torch.tensor([2.0], dtype=torch.float64))
    opt = torch.optim.AdamW([p], lr=0.1, weight_decay=0.5)
    p.grad = torch.zeros_like(p)
    opt.step()
    assert float(p.detach()) == pytest.approx(2.0 * (1 - 0.1 * 0.5), rel=1e-12)
