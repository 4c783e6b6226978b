"""Operator-facing command surface.

Subcommands: ``dataset gen``, ``train vae``, ``train diffusion``, ``infer``,
``evaluate``. Every command is deterministic given --seed and emits files
only. Exit codes are frozen: 0 ok, 2 I/O failure, 3 usage error, 4 diverged
loss, 5 resume mismatch.
"""

import argparse
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import ingest, metrics, oracle, render
from .backbone import BackboneConfig
from .errors import (
    DivergedLoss,
    IoFailure,
    MissingFile,
    RadioMapError,
    ResumeMismatch,
)
from .pipeline import generate_gray_map, generate_gray_maps, load_bundle
from .training import TrainConfig, TrainingSet, load_frozen_vae, run_training, run_vae_training
from .vae import VaeConfig

EXIT_OK = 0
EXIT_IO = 2
EXIT_USAGE = 3
EXIT_DIVERGED = 4
EXIT_RESUME = 5

DATA_ROOT_ENV = "RADIOMAP_DATA_ROOT"


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _add_train_flags(p):
    p.add_argument("--config", help="JSON file with defaults for these flags")
    p.add_argument("--data", default=os.environ.get(DATA_ROOT_ENV), help="dataset root")
    p.add_argument("--out", required=True, help="output directory for checkpoints and logs")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--lr-start", type=float, default=5e-5)
    p.add_argument("--lr-end", type=float, default=5e-6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoint-every", type=int, default=0)


def build_parser() -> _Parser:
    parser = _Parser(prog="radiomap", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_dataset = sub.add_parser("dataset", help="dataset tooling")
    dataset_sub = p_dataset.add_subparsers(dest="dataset_command", required=True)
    p_gen = dataset_sub.add_parser("gen", help="generate a synthetic dataset")
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--n", type=int, default=64, help="grid side length")
    p_gen.add_argument("--maps", type=int, default=8)
    p_gen.add_argument("--buildings", type=int, default=10)
    p_gen.add_argument("--vehicles", type=int, default=5)
    p_gen.add_argument("--out", required=True)

    p_train = sub.add_parser("train", help="run a training phase")
    train_sub = p_train.add_subparsers(dest="train_command", required=True)
    p_vae = train_sub.add_parser("vae", help="stage 1: autoencoder")
    _add_train_flags(p_vae)
    p_vae.add_argument("--embed-dim", type=int, default=128)
    p_vae.add_argument("--downsample-factor", type=int, default=4)
    p_diff = train_sub.add_parser("diffusion", help="stage 2: denoiser (needs a VAE checkpoint)")
    _add_train_flags(p_diff)
    p_diff.add_argument("--vae-checkpoint", required=True)
    p_diff.add_argument("--t-train", type=int, default=1000)
    p_diff.add_argument("--base-width", type=int, default=64)
    p_diff.add_argument("--drift-kind", choices=("constant", "linear"), default="constant")
    p_diff.add_argument("--no-aft", action="store_true", help="disable the spectral filter")

    p_infer = sub.add_parser("infer", help="sample one radio map")
    p_infer.add_argument("--checkpoint", required=True)
    p_infer.add_argument("--scene", required=True, help="static-mask raster (PNG)")
    p_infer.add_argument("--bs-row", type=int, required=True)
    p_infer.add_argument("--bs-col", type=int, required=True)
    p_infer.add_argument("--steps", type=int, default=500)
    p_infer.add_argument("--seed", type=int, default=0)
    p_infer.add_argument("--out", required=True)

    p_eval = sub.add_parser("evaluate", help="run the metric suite over a split")
    p_eval.add_argument("--checkpoint")
    p_eval.add_argument("--data", default=os.environ.get(DATA_ROOT_ENV), required=False)
    p_eval.add_argument("--split", choices=("train", "test"), default="test")
    p_eval.add_argument("--report", required=True, help="directory for report files")
    p_eval.add_argument("--steps", type=int, default=500)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument(
        "--ground-truth-passthrough", action="store_true",
        help="score the ground truth against itself (harness check)",
    )
    return parser


def _apply_config_file(args):
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise MissingFile(str(path))
        overrides = json.loads(path.read_text())
        for key, value in overrides.items():
            attr = key.replace("-", "_")
            if not hasattr(args, attr):
                raise _UsageError(f"unknown config key {key!r}")
            if f"--{key}" not in sys.argv and f"--{attr}" not in sys.argv:
                setattr(args, attr, value)
    return args


def _cmd_dataset_gen(args) -> int:
    scenes, maps = [], []
    cfg = oracle.OracleConfig()
    for k in range(args.maps):
        scene = oracle.generate_scene(args.seed + k, args.n, args.buildings, args.vehicles)
        scenes.append(scene)
        maps.append(oracle.compute_pathloss(scene, cfg))
    index = ingest.save_synthetic_dataset(scenes, maps, args.out, cfg.encode_config())
    print(Path(index.root) / ingest.MANIFEST_NAME)
    return EXIT_OK


def _require_data(args):
    if not args.data:
        raise _UsageError(f"--data is required (or set {DATA_ROOT_ENV})")
    return args.data


def _cmd_train_vae(args) -> int:
    index = ingest.load_synthetic_dataset(_require_data(args))
    train_set = TrainingSet.from_index(index)
    vae_cfg = VaeConfig(embed_dim=args.embed_dim, downsample_factor=args.downsample_factor)
    cfg = TrainConfig(
        batch_size=args.batch_size, lr_start=args.lr_start, lr_end=args.lr_end,
        max_steps=args.steps, seed=args.seed, checkpoint_every=args.checkpoint_every,
    )
    final = run_vae_training(train_set.grays[:, 0].numpy(), vae_cfg, cfg, args.out,
                             resume=args.resume)
    print(final)
    return EXIT_OK


def _cmd_train_diffusion(args) -> int:
    index = ingest.load_synthetic_dataset(_require_data(args))
    train_set = TrainingSet.from_index(index)
    vae = load_frozen_vae(args.vae_checkpoint)
    latent_size = index.n // vae.cfg.downsample_factor
    backbone_cfg = BackboneConfig(
        latent_size=latent_size, base_width=args.base_width,
        aft_enabled=not args.no_aft, drift_kind=args.drift_kind,
    )
    cfg = TrainConfig(
        t_train=args.t_train, batch_size=args.batch_size, lr_start=args.lr_start,
        lr_end=args.lr_end, max_steps=args.steps, seed=args.seed,
        drift_kind=args.drift_kind, checkpoint_every=args.checkpoint_every,
    )
    final = run_training(train_set, cfg, vae, backbone_cfg, args.out, resume=args.resume)
    print(final)
    return EXIT_OK


def _load_scene_rasters(scene_path, bs_row, bs_col):
    from .domain import BaseStation, EnvironmentScene

    path = Path(scene_path)
    if not path.exists():
        raise MissingFile(str(path))
    static = (ingest._read_gray_png(path) > 127).astype(np.uint8)
    dyn_path = Path(ingest._dynamic_path_for(str(path)))
    if dyn_path != path and dyn_path.exists():
        dynamic = (ingest._read_gray_png(dyn_path) > 127).astype(np.uint8)
    else:
        dynamic = np.zeros_like(static)
    n = static.shape[0]
    return EnvironmentScene(static, dynamic, BaseStation(bs_row, bs_col), n)


def _cmd_infer(args) -> int:
    if not Path(args.checkpoint).exists():
        raise MissingFile(args.checkpoint)
    bundle = load_bundle(args.checkpoint)
    scene = _load_scene_rasters(args.scene, args.bs_row, args.bs_col)
    gray, elapsed = generate_gray_map(bundle, scene, steps=args.steps, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    render.save_gray(gray, out / "predicted_gray.png")
    render.save_heatmap(gray, out / "predicted_heatmap.png")
    print(f"sampling_time_s={elapsed:.3f}")
    print(out / "predicted_heatmap.png")
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    index = ingest.load_synthetic_dataset(_require_data(args), split=args.split)
    if args.ground_truth_passthrough:
        # score each record's ground truth against itself (harness check)
        cache = {}

        def loader(idx, record):
            scene, gray = ingest.load_record(idx, record)
            cache["last"] = gray
            return scene, gray

        report = metrics.evaluate_split(lambda scene: cache["last"], index, loader=loader)
    else:
        if not args.checkpoint:
            raise _UsageError("--checkpoint is required unless --ground-truth-passthrough")
        if not Path(args.checkpoint).exists():
            raise MissingFile(args.checkpoint)
        bundle = load_bundle(args.checkpoint)

        def predictor(scene):
            gray, _ = generate_gray_map(bundle, scene, steps=args.steps, seed=args.seed)
            return gray

        report = metrics.evaluate_split(predictor, index)
    report_dir = Path(args.report)
    report_dir.mkdir(parents=True, exist_ok=True)
    metrics.write_report(report, report_dir / "report.txt", report_dir / "report.csv")
    print(report_dir / "report.txt")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _apply_config_file(args)
        if args.command == "dataset":
            return _cmd_dataset_gen(args)
        if args.command == "train":
            if args.train_command == "vae":
                return _cmd_train_vae(args)
            return _cmd_train_diffusion(args)
        if args.command == "infer":
            return _cmd_infer(args)
        return _cmd_evaluate(args)
    except _UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DivergedLoss as e:
        print(f"diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except ResumeMismatch as e:
        print(f"resume mismatch: {e}", file=sys.stderr)
        return EXIT_RESUME
    except (IoFailure, MissingFile, OSError) as e:
        print(f"io error: {e}", file=sys.stderr)
        return EXIT_IO
    except RadioMapError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
