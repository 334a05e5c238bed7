"""Command-line entry points: gen-toy-data, train, build-bank, evaluate.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical
failure. All commands are deterministic given identical inputs when
deterministic mode is on (the default).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, load_run_config, save_run_config
from .data import load_train_images
from .decoder import DecoderConfig, default_decoder_config
from .encoder import config_digest
from .errors import (
    ConfigError,
    DataError,
    EvaluationError,
    InputError,
    NumericalError,
    PatchAEError,
    WeightsUnavailableError,
)
from .evaluation import evaluate_class, format_report_table
from .memory_bank import coreset_subsample, load_bank, save_bank, upsample_scores
from .toy_data import DEFECT_KINDS, TEXTURES, ToySpec, generate
from .training import extract_normal_bank, save_loss_history, set_deterministic, train


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    training = cfg.training
    if getattr(args, "seed", None) is not None:
        training = dataclasses.replace(training, seed=args.seed)
    if getattr(args, "deterministic", False):
        training = dataclasses.replace(training, deterministic=True)
    cfg = dataclasses.replace(cfg, training=training)
    if getattr(args, "reweight", False):
        cfg = dataclasses.replace(
            cfg, evaluation=dataclasses.replace(cfg.evaluation, reweight=True)
        )
    if getattr(args, "coreset_fraction", None) is not None:
        cfg = dataclasses.replace(
            cfg, bank=dataclasses.replace(cfg.bank, coreset_fraction=args.coreset_fraction)
        )
    return cfg


def _decoder_config(cfg: RunConfig) -> DecoderConfig:
    enc = cfg.encoder
    base = default_decoder_config(enc.c3, enc.patch_px, enc.in_channels)
    if cfg.decoder.hidden is None:
        return base
    return dataclasses.replace(base, hidden=cfg.decoder.hidden)


def _work_dir(cfg: RunConfig) -> Path:
    path = Path(cfg.data.work_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def cmd_train(args) -> int:
    cfg = _apply_overrides(load_run_config(args.config), args)
    images = load_train_images(cfg.data.class_dir, cfg.encoder.input_size)
    result = train(
        images,
        cfg.augmentation,
        cfg.encoder,
        _decoder_config(cfg),
        cfg.loss,
        cfg.training,
    )
    work = _work_dir(cfg)
    checkpoint_path = work / "checkpoint.npz"
    save_checkpoint(checkpoint_path, result.encoder, result.decoder)
    history_path = work / "loss_history.csv"
    save_loss_history(history_path, result.history)
    print(f"trained {cfg.training.epochs} epochs on {images.shape[0]} images")
    print(f"first/last epoch mean loss: {result.history[0]:.6g} / {result.history[-1]:.6g}")
    print(f"checkpoint: {checkpoint_path}")
    print(f"loss history: {history_path}")
    return 0


def cmd_build_bank(args) -> int:
    cfg = _apply_overrides(load_run_config(args.config), args)
    set_deterministic(cfg.training.deterministic)
    encoder, _ = load_checkpoint(args.checkpoint)
    if encoder.config != cfg.encoder:
        raise ConfigError(
            "checkpoint encoder config does not match the run config "
            f"(checkpoint digest {config_digest(encoder.config).hex()[:12]}, "
            f"config digest {config_digest(cfg.encoder).hex()[:12]})"
        )
    images = load_train_images(cfg.data.class_dir, cfg.encoder.input_size)
    bank = extract_normal_bank(encoder, images)
    if cfg.bank.coreset_fraction < 1.0:
        bank = coreset_subsample(
            bank, cfg.bank.coreset_fraction, seed=cfg.bank.coreset_seed
        )
    out_path = Path(args.out) if args.out else _work_dir(cfg) / "bank.pae"
    save_bank(out_path, bank)
    print(f"bank rows: {bank.size}")
    print(f"bank dim: {bank.dim}")
    print(f"bank file: {out_path}")
    return 0


def _write_heatmaps(report, out_dir: Path, input_size: int) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    for image_id, score_map in report.score_maps.items():
        stem = image_id.replace("/", "_")
        if "." in stem:
            stem = stem.rsplit(".", 1)[0]
        np.save(out_dir / f"{stem}_scores.npy", score_map.scores)
        up = upsample_scores(score_map.scores, input_size)
        span = float(up.max() - up.min())
        # display normalization only; raw scores live in the .npy next door
        disp = (up - up.min()) / span if span > 0 else np.zeros_like(up)
        png = np.clip(np.round(disp * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(png).save(out_dir / f"{stem}_heatmap.png")


def cmd_evaluate(args) -> int:
    cfg = _apply_overrides(load_run_config(args.config), args)
    set_deterministic(cfg.training.deterministic)
    encoder, _ = load_checkpoint(args.checkpoint)
    bank = load_bank(args.bank)
    if bank.config_digest != config_digest(encoder.config):
        raise ConfigError(
            "bank was built for a different encoder config "
            f"(bank digest {bank.config_digest.hex()[:12]}, "
            f"checkpoint digest {config_digest(encoder.config).hex()[:12]})"
        )
    if bank.dim != encoder.config.c3:
        raise InputError(
            f"bank dim {bank.dim} does not match encoder feature width {encoder.config.c3}"
        )
    report = evaluate_class(
        encoder,
        bank,
        cfg.data.class_dir,
        reweight=cfg.evaluation.reweight,
        neighborhood=cfg.evaluation.reweight_neighborhood,
        collect_maps=args.heatmaps is not None,
    )
    print(format_report_table([report]))
    report_path = Path(args.report) if args.report else _work_dir(cfg) / "report.json"
    report_path.write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
    print(f"report: {report_path}")
    if args.heatmaps is not None:
        _write_heatmaps(report, Path(args.heatmaps), cfg.encoder.input_size)
        print(f"heatmaps: {args.heatmaps}")
    return 0


def cmd_gen_toy_data(args) -> int:
    spec = ToySpec(
        n_train=args.n_train,
        n_test_good=args.n_test_good,
        n_test_defect=args.n_test_defect,
        texture=args.texture,
        defect_kind=args.defect_kind,
        seed=args.seed if args.seed is not None else 0,
        image_size=args.image_size,
        class_name=args.class_name,
    )
    class_dir = generate(spec, args.out)
    print(f"toy dataset: {class_dir}")
    if args.write_config:
        cfg = RunConfig()
        cfg = dataclasses.replace(
            cfg,
            data=dataclasses.replace(
                cfg.data, root=str(args.out), class_name=spec.class_name
            ),
            encoder=dataclasses.replace(
                cfg.encoder,
                input_size=spec.image_size,
                backbone="scratch-tiny",
                c1=32,
                c2=64,
                c3=48,
            ),
            training=dataclasses.replace(cfg.training, learning_rate=1e-3),
        )
        save_run_config(cfg, args.write_config)
        print(f"run config: {args.write_config}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="patchae", description="Patch-wise auto-encoder anomaly detection pipeline"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="run config YAML")
    common.add_argument("--seed", type=int, default=None, help="override training seed")
    common.add_argument(
        "--deterministic", action="store_true", help="force single-threaded deterministic mode"
    )

    p_train = sub.add_parser("train", parents=[common], help="train encoder and decoder")
    p_train.set_defaults(func=cmd_train)

    p_bank = sub.add_parser(
        "build-bank", parents=[common], help="extract the normal feature bank"
    )
    p_bank.add_argument("--checkpoint", required=True, help="trained checkpoint (.npz)")
    p_bank.add_argument("--out", default=None, help="bank output path")
    p_bank.add_argument(
        "--coreset-fraction", type=float, default=None, help="greedy coreset fraction (0, 1]"
    )
    p_bank.set_defaults(func=cmd_build_bank)

    p_eval = sub.add_parser("evaluate", parents=[common], help="score a test set")
    p_eval.add_argument("--checkpoint", required=True, help="trained checkpoint (.npz)")
    p_eval.add_argument("--bank", required=True, help="memory bank file")
    p_eval.add_argument("--report", default=None, help="JSON report output path")
    p_eval.add_argument(
        "--heatmaps", default=None, help="directory for per-image score maps and heatmaps"
    )
    p_eval.add_argument(
        "--reweight", action="store_true", help="rescale the max patch score by its neighborhood"
    )
    p_eval.set_defaults(func=cmd_evaluate)

    p_toy = sub.add_parser("gen-toy-data", help="generate a seeded toy dataset")
    p_toy.add_argument("--out", required=True, help="dataset root directory")
    p_toy.add_argument("--seed", type=int, default=0)
    p_toy.add_argument("--n-train", type=int, default=50)
    p_toy.add_argument("--n-test-good", type=int, default=20)
    p_toy.add_argument("--n-test-defect", type=int, default=20)
    p_toy.add_argument("--texture", choices=TEXTURES, default="stripes")
    p_toy.add_argument("--defect-kind", choices=DEFECT_KINDS, default="blot")
    p_toy.add_argument("--image-size", type=int, default=64)
    p_toy.add_argument("--class-name", default="toy")
    p_toy.add_argument(
        "--write-config", default=None, help="also write a matching run config YAML"
    )
    p_toy.set_defaults(func=cmd_gen_toy_data)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if not exc.code else 1
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (DataError, EvaluationError, InputError, WeightsUnavailableError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except PatchAEError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
