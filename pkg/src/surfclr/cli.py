"""Command-line entry point.

Subcommands: synth, pretrain, finetune, evaluate, embed, report, plot.
Each takes --config (YAML or JSON) plus repeatable --set dotted overrides;
synth additionally accepts direct flags. Exit codes: 0 success, 2 config or
validation error, 3 I/O error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import torch

from . import checkpoint as ckpt_io
from .config import load_config
from .contrastive import retrieval_accuracy
from .data import (
    ChangeConfig,
    Dataset,
    SceneConfig,
    rasters,
    split_dataset,
    write_change_dataset,
    write_paired_dataset,
)
from .encoders import EmbeddingBatch, EncoderConfig, build_encoder
from .exceptions import (
    ConfigurationError,
    DataIOError,
    IndexingError,
    NumericalError,
    SurfclrError,
)
from .heads import HeadSpec, build_change_model, build_segmentation_model, predict
from .metrics import MetricsReport, render_table
from .plotting import read_log, render_curves, sample_panel, save_panel
from .seeding import stable_seed
from .training import TrainConfig, evaluate_samples, finetune, pretrain


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=None, help="YAML or JSON config file")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="dotted config override, repeatable (e.g. pretrain.train.epochs=30)",
    )
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="surfclr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic dataset")
    _add_common(p)
    p.add_argument("--kind", choices=["paired", "change"], default=None)
    p.add_argument("--n", type=int, default=None, help="number of samples")
    p.add_argument("--size", type=int, default=None, help="scene edge length in pixels")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--force", action="store_true", help="overwrite a non-empty directory")

    for name, desc in [
        ("pretrain", "contrastive pretraining of both encoders"),
        ("finetune", "train a downstream head over a frozen encoder"),
        ("evaluate", "score a fine-tuned checkpoint on a dataset split"),
        ("embed", "dump embeddings for a paired dataset"),
        ("plot", "render curves and sample panels"),
    ]:
        p = sub.add_parser(name, help=desc)
        _add_common(p)

    p = sub.add_parser("report", help="tabulate metrics.json files")
    p.add_argument("paths", nargs="+", help="metrics.json files")
    p.add_argument("--names", nargs="*", default=None, help="row label per file")
    return parser


def _resolve(args) -> dict:
    cfg = load_config(args.config, args.overrides)
    if args.seed is not None:
        cfg["seed"] = args.seed
    return cfg


def _train_config(phase: str, section: dict, seed: int) -> TrainConfig:
    t, p = section["train"], section["patch"]
    return TrainConfig(
        phase=phase,
        batch_size=t["batch_size"],
        epochs=t["epochs"],
        learning_rate=t["learning_rate"],
        weight_decay=t["weight_decay"],
        optimizer=t["optimizer"],
        seed=seed,
        val_fraction=t["val_fraction"],
        checkpoint_every=t["checkpoint_every"],
        grad_clip_norm=t["grad_clip_norm"],
        negatives=t["negatives"],
        tau_init=t["tau_init"],
        tau_min=t["tau_min"],
        tau_max=t["tau_max"],
        patch_size=p["size"],
        patch_strategy=p["strategy"],
        patches_per_image=p["patches_per_image"],
        eval_batch_size=t["eval_batch_size"],
    )


def _encoder_config(modality: str, section: dict) -> EncoderConfig:
    return EncoderConfig(
        modality=modality,
        feature_dim=section["feature_dim"],
        projection_hidden_dim=section["projection_hidden_dim"],
        projection_dim=section["projection_dim"],
        width_multiplier=section["width_multiplier"],
    )


def cmd_synth(args) -> int:
    cfg = _resolve(args)
    s = cfg["synth"]
    kind = args.kind or s["kind"]
    n = args.n if args.n is not None else s["n"]
    out = args.out or s["out"]
    force = bool(args.force or s["force"])
    scene_dict = dict(s["scene"])
    if args.size is not None:
        scene_dict["size"] = args.size
    scene = SceneConfig(**scene_dict)
    seed = cfg["seed"]
    if kind == "paired":
        count = write_paired_dataset(out, n, scene, seed, force=force)
    else:
        change = ChangeConfig(scene=scene, **s["change"])
        count = write_change_dataset(out, n, change, seed, force=force)
    print(f"wrote {count} {kind} samples to {out}")
    return 0


def cmd_pretrain(args) -> int:
    cfg = _resolve(args)
    seed = cfg["seed"]
    section = cfg["pretrain"]
    rgb = build_encoder(_encoder_config("rgb", cfg["encoder"]), stable_seed(seed, "rgb_encoder"))
    agl = build_encoder(_encoder_config("agl", cfg["encoder"]), stable_seed(seed, "agl_encoder"))
    dataset = Dataset.open(section["dataset"], kind="paired_agl", h_max=section["h_max"])
    tc = _train_config("pretrain", section, seed)
    _, _, temperature, record = pretrain(
        rgb, agl, dataset, tc, section["run_dir"], config_echo=cfg
    )
    if record.epochs:
        last = record.epochs[-1]
        print(
            f"pretrain done: {len(record.epochs)} epochs, "
            f"train_loss={last['train_loss']:.4f}, val_top1={last['val_top1']:.4f}, "
            f"tau={last['tau']:.4f}"
        )
    print(f"final checkpoint: {record.final_checkpoint}")
    return 0


def _load_finetune_encoder(cfg: dict):
    section = cfg["finetune"]
    if section["random_encoder"]:
        bundle = build_encoder(
            _encoder_config("rgb", cfg["encoder"]), stable_seed(cfg["seed"], "rgb_encoder")
        )
    else:
        loaded = ckpt_io.load_checkpoint(section["encoder_checkpoint"])
        name = section["encoder_name"]
        if name not in loaded.encoders:
            raise ConfigurationError(
                f"checkpoint {section['encoder_checkpoint']} has encoders "
                f"{sorted(loaded.encoders)}, not {name!r}"
            )
        bundle = loaded.encoders[name]
    bundle.set_frozen(True)
    return bundle


def cmd_finetune(args) -> int:
    cfg = _resolve(args)
    section = cfg["finetune"]
    encoder = _load_finetune_encoder(cfg)
    head_cfg = section["head"]
    spec = HeadSpec(
        architecture=head_cfg["architecture"],
        num_classes=head_cfg["num_classes"],
        decoder_widths=tuple(head_cfg["decoder_widths"]) if head_cfg["decoder_widths"] else None,
        fusion=head_cfg["fusion"],
    )
    dataset = Dataset.open(section["dataset"], num_classes=spec.num_classes)
    tc = _train_config("finetune", section, cfg["seed"])
    model, record = finetune(encoder, spec, dataset, tc, section["run_dir"], config_echo=cfg)
    if record.epochs:
        last = record.epochs[-1]
        extra = f", change_iou={last['val_change_iou']:.4f}" if "val_change_iou" in last else ""
        print(
            f"finetune done: {len(record.epochs)} epochs, "
            f"val_miou={last['val_miou']:.4f}, val_f1={last['val_f1']:.4f}{extra}"
        )
    print(f"final checkpoint: {record.final_checkpoint}")
    return 0


def _rebuild_head_model(loaded: ckpt_io.Checkpoint, checkpoint_path: str):
    if not loaded.heads:
        raise ConfigurationError(f"checkpoint {checkpoint_path} holds no downstream head")
    if "encoder" in loaded.encoders:
        encoder = loaded.encoders["encoder"]
    elif len(loaded.encoders) == 1:
        encoder = next(iter(loaded.encoders.values()))
    else:
        raise ConfigurationError(
            f"checkpoint {checkpoint_path} holds encoders {sorted(loaded.encoders)}; "
            "expected a single fine-tune encoder"
        )
    encoder.set_frozen(True)
    head = next(iter(loaded.heads.values()))
    spec = HeadSpec.from_dict(head.spec)
    if spec.architecture == "fc_siam_diff":
        model = build_change_model(encoder, spec)
    else:
        model = build_segmentation_model(encoder, spec)
    model.load_head_parameter_blobs(head.arrays)
    return model, spec


def _pick_split(dataset: Dataset, split: str, val_fraction: float, seed: int):
    if dataset.descriptor.predefined_splits:
        chosen = [r for r in dataset.records if r.split == split]
        if not chosen:
            raise ConfigurationError(f"dataset has no samples in predefined split {split!r}")
        return chosen
    if split == "test":
        raise ConfigurationError("no predefined splits in this dataset; only train/val exist")
    train, val = split_dataset(dataset.records, val_fraction, seed)
    return val if split == "val" else train


def cmd_evaluate(args) -> int:
    cfg = _resolve(args)
    section = cfg["evaluate"]
    loaded = ckpt_io.load_checkpoint(section["checkpoint"])
    model, spec = _rebuild_head_model(loaded, section["checkpoint"])
    if spec.num_classes != section["num_classes"]:
        raise ConfigurationError(
            f"checkpoint head has {spec.num_classes} classes, config says "
            f"{section['num_classes']}"
        )
    dataset = Dataset.open(section["dataset"], num_classes=spec.num_classes)
    records = _pick_split(dataset, section["split"], section["val_fraction"], cfg["seed"])
    samples = [dataset.load(r) for r in records]
    report, cm = evaluate_samples(model, samples, spec.num_classes, section["batch_size"])

    out = Path(section["out"])
    out.mkdir(parents=True, exist_ok=True)
    payload = {
        "checkpoint": str(section["checkpoint"]),
        "dataset": str(section["dataset"]),
        "split": section["split"],
        "num_classes": spec.num_classes,
        "confusion_matrix": cm.counts.tolist(),
        "report": report.to_json_dict(),
    }
    with open(out / "metrics.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")

    pred_dir = out / "predictions"
    pred_dir.mkdir(exist_ok=True)
    for sample in samples:
        if hasattr(sample, "pre"):
            result = predict(model, (sample.pre[None], sample.post[None]))
        else:
            result = predict(model, sample.image[None])
        rasters.write_mask(pred_dir / f"{sample.sample_id}.png", result.predicted_mask[0])

    table = render_table([(section["split"], report)])
    (out / "table.txt").write_text(table + "\n")
    print(table)
    print(f"metrics written to {out / 'metrics.json'}")
    return 0


def cmd_embed(args) -> int:
    cfg = _resolve(args)
    section = cfg["embed"]
    loaded = ckpt_io.load_checkpoint(section["checkpoint"])
    missing = {"rgb", "agl"} - set(loaded.encoders)
    if missing:
        raise ConfigurationError(
            f"checkpoint {section['checkpoint']} lacks encoders {sorted(missing)}"
        )
    rgb, agl = loaded.encoders["rgb"], loaded.encoders["agl"]
    rgb.set_training(False)
    agl.set_training(False)
    dataset = Dataset.open(section["dataset"], kind="paired_agl", h_max=section["h_max"])

    ids, r_rows, a_rows = [], [], []
    bs = section["batch_size"]
    with torch.no_grad():
        for i in range(0, len(dataset.records), bs):
            chunk = dataset.records[i : i + bs]
            samples = [dataset.load(r) for r in chunk]
            rgb_x = np.stack([s.rgb for s in samples]).astype(np.float32)
            agl_x = np.stack([s.agl for s in samples]).astype(np.float32) / dataset.descriptor.h_max
            sids = [s.sample_id for s in samples]
            r_rows.append(rgb.encode(rgb_x, sids).vectors.numpy())
            a_rows.append(agl.encode(agl_x, sids).vectors.numpy())
            ids.extend(sids)
    r_mat = np.concatenate(r_rows, axis=0)
    a_mat = np.concatenate(a_rows, axis=0)

    out = Path(section["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    np.savez(
        out,
        vectors=np.concatenate([r_mat, a_mat], axis=0).astype(np.float32),
        sample_ids=np.array(ids + ids),
        modalities=np.array(["rgb"] * len(ids) + ["agl"] * len(ids)),
    )
    print(f"wrote {2 * len(ids)} embedding rows to {out}")

    if len(ids) >= 2:
        zr = EmbeddingBatch("rgb", torch.from_numpy(r_mat), ids)
        za = EmbeddingBatch("agl", torch.from_numpy(a_mat), ids)
        top1 = retrieval_accuracy(zr, za, k=1)
        print(f"top-1 retrieval: rgb->agl {top1[0]:.4f}, agl->rgb {top1[1]:.4f}")
        k5 = min(5, len(ids) - 1)
        top5 = retrieval_accuracy(zr, za, k=k5)
        print(f"top-{k5} retrieval: rgb->agl {top5[0]:.4f}, agl->rgb {top5[1]:.4f}")
    return 0


def cmd_report(args) -> int:
    rows = []
    names = args.names or []
    if names and len(names) != len(args.paths):
        raise ConfigurationError(
            f"{len(names)} names for {len(args.paths)} metrics files"
        )
    for i, path in enumerate(args.paths):
        p = Path(path)
        if not p.is_file():
            raise DataIOError(f"metrics file not found: {p}")
        with open(p) as fh:
            payload = json.load(fh)
        report = MetricsReport.from_json_dict(payload["report"])
        label = names[i] if names else str(p.parent.name or p.stem)
        rows.append((label, report))
    print(render_table(rows))
    return 0


def cmd_plot(args) -> int:
    cfg = _resolve(args)
    section = cfg["plot"]
    run_dir = Path(section["run_dir"])
    rows = read_log(run_dir)
    out = Path(section["out"]) / run_dir.name
    out.mkdir(parents=True, exist_ok=True)
    render_curves(rows, out / "curves.png")
    written = [out / "curves.png"]

    if section["dataset"]:
        dataset = Dataset.open(section["dataset"], num_classes=256)
        eval_dir = Path(section["eval_dir"]) if section["eval_dir"] else None
        records = dataset.records
        if eval_dir is not None:
            # only ids the evaluate step actually scored have rasters
            pred_dir = eval_dir / "predictions"
            have = {p.stem for p in pred_dir.glob("*.png")} if pred_dir.is_dir() else set()
            records = [r for r in records if r.sample_id in have]
            if not records:
                raise DataIOError(f"no prediction rasters under {pred_dir}")
        for record in records[: section["samples"]]:
            sample = dataset.load(record)
            prediction = None
            if eval_dir is not None:
                prediction = rasters.read_mask(eval_dir / "predictions" / f"{record.sample_id}.png")
            panel = sample_panel(sample, prediction)
            path = out / f"{record.sample_id}.png"
            save_panel(path, panel)
            written.append(path)
    print(f"wrote {len(written)} figure(s) under {out}")
    return 0


_DISPATCH = {
    "synth": cmd_synth,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "evaluate": cmd_evaluate,
    "embed": cmd_embed,
    "report": cmd_report,
    "plot": cmd_plot,
}


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, NumericalError):
        return 4
    if isinstance(exc, (DataIOError, IndexingError, FileNotFoundError, OSError)):
        return 3
    if isinstance(exc, SurfclrError):
        return 2
    return 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _DISPATCH[args.command](args)
    except SurfclrError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code_for(exc)
    except (FileNotFoundError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
