"""Command-line entry point: ``stawgan <command> [options]``.

Commands
  make-masks  rasterize annotations, drop dark thermal frames, write manifests
  make-toy    write a deterministic synthetic paired dataset
  train       train from a manifest (or resume from a checkpoint)
  translate   translate a split with a checkpoint and write PNGs plus masks
  evaluate    compute the metric report for a checkpoint or the ground truth

Failures print one ``error: ...`` line on stderr. Missing files and invalid
configuration exit with status 2.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .dataset import (
    DEFAULT_DARKNESS_THRESHOLD,
    DOMAINS,
    IR,
    RGB,
    DatasetManifest,
    PairedTranslationDataset,
    filter_manifest,
    make_toy_dataset,
    to_uint8,
    write_masks,
)
from .errors import ConfigurationError, InvalidAnnotationError, StawGANError
from .metrics import GroundTruthTranslator, RandomClassifier, RandomFeatureExtractor, default_backbones, evaluate
from .models import ModelConfig, load_model
from .training import TrainConfig, Trainer, apply_overrides, collate, read_config_file

DATA_ROOT_ENV = "STAWGAN_DATA_ROOT"
EXIT_USAGE = 2
EXIT_FAILURE = 1

logger = logging.getLogger("stawgan")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


class _UsageError(Exception):
    pass


def _data_root_arg(p: argparse.ArgumentParser, required_hint: str = "dataset root"):
    p.add_argument(
        "--data-root",
        default=os.environ.get(DATA_ROOT_ENV),
        help=f"{required_hint} (default: ${DATA_ROOT_ENV})",
    )


def _split_arg(p, default="val"):
    p.add_argument("--split", choices=("train", "val"), default=default, help=f"dataset split (default: {default})")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stawgan", description="Thermal/visible translation with target-aware GAN training.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("make-masks", help="rasterize annotations and write manifests")
    _data_root_arg(p)
    p.add_argument("--splits", nargs="+", default=["train", "val"], choices=("train", "val"),
                   help="splits to process (default: train val)")
    p.add_argument("--darkness-threshold", type=float, default=DEFAULT_DARKNESS_THRESHOLD,
                   help="drop frames whose mean IR intensity is below this fraction of full scale")
    p.add_argument("--paired", dest="paired", action="store_true", default=True, help="keep only paired records")
    p.add_argument("--unpaired", dest="paired", action="store_false", help="keep single-modality records")

    p = sub.add_parser("make-toy", help="write a synthetic paired dataset")
    p.add_argument("--out", default=None, help="output root (default: --data-root)")
    _data_root_arg(p, "output root if --out is absent")
    p.add_argument("--n", type=int, default=500, help="training samples (default: 500)")
    p.add_argument("--n-val", type=int, default=100, help="validation samples (default: 100)")
    p.add_argument("--size", type=int, default=64, help="image side in pixels (default: 64)")
    p.add_argument("--seed", type=int, default=0, help="random seed; the validation split uses seed+1")

    p = sub.add_parser("train", help="train a model")
    _data_root_arg(p)
    p.add_argument("--config", help="flat 'key = value' file with TrainConfig keys and lambda_* weights")
    p.add_argument("--checkpoint", help="resume from this checkpoint")
    p.add_argument("--out", required=True, help="run directory for checkpoints, logs and plots")
    p.add_argument("--seed", type=int, help="random seed")
    p.add_argument("--epochs", type=int, help="total epochs")
    p.add_argument("--batch-size", type=int, help="batch size")
    p.add_argument("--image-size", type=int, help="image side in pixels")
    p.add_argument("--paired", dest="paired", action="store_const", const=True, help="use paired losses (default)")
    p.add_argument("--unpaired", dest="paired", action="store_const", const=False, help="unpaired training")
    p.add_argument("--model-size", choices=("full", "toy"), default="full", help="network widths (default: full)")
    p.add_argument("--device", default="cpu", help="torch device (default: cpu)")

    p = sub.add_parser("translate", help="translate a split and write PNGs with predicted masks")
    _data_root_arg(p)
    _split_arg(p)
    p.add_argument("--checkpoint", required=True, help="model checkpoint")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--direction", choices=("ir2rgb", "rgb2ir", "both"), default="ir2rgb",
                   help="translation direction (default: ir2rgb)")
    p.add_argument("--limit", type=int, default=None, help="translate at most this many samples")
    p.add_argument("--batch-size", type=int, default=16, help="batch size (default: 16)")
    p.add_argument("--device", default="cpu", help="torch device (default: cpu)")

    p = sub.add_parser("evaluate", help="write the metric report for a checkpoint")
    _data_root_arg(p)
    _split_arg(p)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--checkpoint", help="model checkpoint")
    group.add_argument("--ground-truth", action="store_true",
                       help="score the paired ground truth against itself (sanity reference)")
    p.add_argument("--out", default=None, help="write metrics.txt and table.md here")
    p.add_argument("--image-size", type=int, default=None, help="image side (default: from checkpoint, else 256)")
    p.add_argument("--batch-size", type=int, default=16, help="batch size (default: 16)")
    p.add_argument("--backbone", choices=("auto", "random", "pretrained"), default="random",
                   help="FID/IS networks: fixed random CNNs, cached Inception, or Inception when cached")
    p.add_argument("--seed", type=int, default=0, help="seed for the random backbones (default: 0)")
    p.add_argument("--device", default="cpu", help="torch device (default: cpu)")
    return parser


# --------------------------------------------------------------------------


def _require_root(args) -> Path:
    if not args.data_root:
        raise ConfigurationError(f"no dataset root: pass --data-root or set {DATA_ROOT_ENV}")
    root = Path(args.data_root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root not found: {root}")
    return root


def _manifest(root: Path, split: str, paired: bool = True) -> DatasetManifest:
    path = root / f"{split}_manifest.txt"
    manifest = DatasetManifest.load(path) if path.is_file() else DatasetManifest.scan(root, split, paired)
    manifest.validate()
    return manifest


def cmd_make_masks(args) -> int:
    root = _require_root(args)
    for split in args.splits:
        if not (root / split).is_dir():
            raise FileNotFoundError(f"split directory not found: {root / split}")
        n_masks = write_masks(root, split) if (root / split / "ann").is_dir() else 0
        manifest = DatasetManifest.scan(root, split, paired=args.paired)
        manifest, removed = filter_manifest(manifest, args.darkness_threshold)
        path = manifest.save()
        print(f"{split}: {n_masks} masks, {len(manifest)} records, {removed} dark frames removed -> {path}")
    return 0


def cmd_make_toy(args) -> int:
    out = args.out or args.data_root
    if not out:
        raise ConfigurationError(f"no output root: pass --out, --data-root or set {DATA_ROOT_ENV}")
    train = make_toy_dataset(out, args.n, args.size, seed=args.seed, split="train")
    print(f"train: {len(train)} samples -> {train.path}")
    if args.n_val > 0:
        val = make_toy_dataset(out, args.n_val, args.size, seed=args.seed + 1, split="val")
        print(f"val: {len(val)} samples -> {val.path}")
    return 0


def _train_config(args, base: TrainConfig) -> TrainConfig:
    values = read_config_file(args.config) if args.config else {}
    for key, flag in (("seed", args.seed), ("epochs", args.epochs), ("batch_size", args.batch_size),
                      ("image_size", args.image_size), ("paired", args.paired)):
        if flag is not None:
            values[key] = str(flag)
    return apply_overrides(base, values)


def cmd_train(args) -> int:
    root = _require_root(args)
    out = Path(args.out)
    if args.checkpoint:
        from .models import read_checkpoint

        payload = read_checkpoint(args.checkpoint)
        config = _train_config(args, TrainConfig(**payload["train_config"]))
        manifest = _manifest(root, "train", config.paired)
        trainer = Trainer.from_checkpoint(args.checkpoint, manifest, device=args.device, config=config)
    else:
        config = _train_config(args, TrainConfig())
        manifest = _manifest(root, "train", config.paired)
        size = config.image_size
        model_config = ModelConfig.toy(size) if args.model_size == "toy" else ModelConfig(image_size=size)
        trainer = Trainer(config, manifest, model_config, device=args.device)
    out.mkdir(parents=True, exist_ok=True)
    last = trainer.fit(out)
    print(f"trained to epoch {trainer.epoch} -> {last}")
    val_path = root / "val_manifest.txt"
    if val_path.is_file() or (root / "val").is_dir():
        val = _manifest(root, "val", config.paired)
        if len(val):
            report = evaluate(trainer.model, val, device=args.device)
            report.save(out / "metrics.txt")
            (out / "table.md").write_text(report.table() + "\n", encoding="utf-8")
            _write_sample_grid(trainer.model, val, out / "samples.png", args.device)
            print(report.table())
    return 0


def _write_sample_grid(model, manifest, path, device, n: int = 4):
    from .plots import sample_grid

    data = PairedTranslationDataset(manifest, size=model.config.image_size)
    items = [data[i] for i in range(min(n, len(data)))]
    batch = collate(items, IR if manifest.paired else None)
    model.eval()
    with torch.no_grad():
        x_t, r_t = model.translate(batch["x"].to(device), batch["r"].to(device), batch["t"].to(device))
    rows = []
    for i in range(len(items)):
        paired = batch["paired"][i].numpy() if batch["paired"] is not None else np.zeros_like(x_t[i].cpu().numpy())
        rows.append([batch["x"][i].numpy(), x_t[i].cpu().numpy(), paired, r_t[i].cpu().numpy()])
    sample_grid(rows, path)


def _save_png(array_chw: np.ndarray, path: Path, gray: bool):
    img = to_uint8(array_chw)
    if gray:
        Image.fromarray(img.mean(axis=0).round().astype(np.uint8), mode="L").save(path)
    else:
        Image.fromarray(np.ascontiguousarray(img.transpose(1, 2, 0)), mode="RGB").save(path)


def cmd_translate(args) -> int:
    root = _require_root(args)
    model = load_model(args.checkpoint).to(args.device).eval()
    manifest = _manifest(root, args.split, paired=False)
    data = PairedTranslationDataset(manifest, size=model.config.image_size)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sources = {"ir2rgb": [IR], "rgb2ir": [RGB], "both": [IR, RGB]}[args.direction]
    n = len(data) if args.limit is None else min(args.limit, len(data))
    written = 0
    for src in sources:
        key = DOMAINS[src]
        indices = [i for i in range(n) if data[i][key].numel() > 0]
        for start in range(0, len(indices), args.batch_size):
            chunk = indices[start : start + args.batch_size]
            batch = collate([data[i] for i in chunk], src)
            with torch.no_grad():
                x_t, r_t = model.translate(batch["x"].to(args.device), batch["r"].to(args.device),
                                           batch["t"].to(args.device))
            target = DOMAINS[1 - src]
            for j, idx in enumerate(chunk):
                rec = manifest.records[idx]
                stem = Path(rec.ir if src == IR else rec.rgb).stem
                _save_png(x_t[j].cpu().numpy(), out / f"{stem}_to_{target}.png", gray=target == "ir")
                mask = (r_t[j, 0].cpu().numpy() > 0).astype(np.uint8) * 255
                Image.fromarray(mask, mode="L").save(out / f"{stem}_to_{target}_mask.png")
                written += 1
    print(f"translated {written} images -> {out}")
    return 0


def cmd_evaluate(args) -> int:
    root = _require_root(args)
    manifest = _manifest(root, args.split)
    if args.ground_truth:
        model, size = GroundTruthTranslator(), args.image_size or 256
    else:
        model = load_model(args.checkpoint).to(args.device)
        size = args.image_size or model.config.image_size
    if args.backbone == "random":
        fe, cl = RandomFeatureExtractor(seed=args.seed), RandomClassifier(seed=args.seed + 1)
    elif args.backbone == "pretrained":
        from .metrics import pretrained_backbones

        fe, cl = pretrained_backbones()
    else:
        fe, cl = default_backbones()
    report = evaluate(model, manifest, fe, cl, image_size=size, batch_size=args.batch_size, device=args.device)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        report.save(out / "metrics.txt")
        (out / "table.md").write_text(report.table() + "\n", encoding="utf-8")
    print(report.table(name="ground truth" if args.ground_truth else Path(args.checkpoint).stem))
    return 0


COMMANDS = {
    "make-masks": cmd_make_masks,
    "make-toy": cmd_make_toy,
    "train": cmd_train,
    "translate": cmd_translate,
    "evaluate": cmd_evaluate,
}


def _fail(message: str, code: int) -> int:
    print("error: " + " ".join(str(message).split()), file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        return _fail(str(exc), EXIT_USAGE)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except (FileNotFoundError, ConfigurationError, InvalidAnnotationError) as exc:
        return _fail(exc, EXIT_USAGE)
    except (StawGANError, OSError, ValueError) as exc:
        return _fail(exc, EXIT_FAILURE)


if __name__ == "__main__":
    sys.exit(main())
