"""Command-line front end: thin wrappers around the library operations.

Subcommands: make-data, label, train, generate, evaluate. Each flag
overrides the matching config-file field, which overrides the built-in
default; HIERASURG_SEED overrides the seed last of all. No modeling or
metric logic lives here.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .config import ENV_SEED, load_run_config
from .errors import (GenerationError, IntegrityError, NumericError,
                     PaletteLookupError, ParameterError, PipelineError,
                     ShapeError, SingularityError, TrainingDivergedError,
                     VocabularyError)

_USER_ERRORS = (ParameterError, ShapeError, IntegrityError, GenerationError,
                PipelineError, TrainingDivergedError, PaletteLookupError,
                SingularityError, NumericError, VocabularyError,
                FileNotFoundError)


def _env_seed(seed: int | None) -> int | None:
    raw = os.environ.get(ENV_SEED)
    if raw is None:
        return seed
    try:
        return int(raw)
    except ValueError:
        raise ParameterError(f"{ENV_SEED} must be an integer, got {raw!r}") from None


def _emit(payload: dict) -> None:
    json.dump(payload, sys.stdout, indent=1, sort_keys=True)
    sys.stdout.write("\n")


def _cmd_make_data(args: argparse.Namespace) -> int:
    from .dataset import make_dataset
    overrides = {k: getattr(args, k) for k in
                 ("seed", "fps", "data_dir", "stage")}
    cfg = load_run_config(args.config, overrides)
    out = args.out or cfg.data_dir
    manifest = make_dataset(cfg, out, args.count, force=args.force)
    _emit({"command": "make-data", "out": out, **manifest})
    return 0


def _cmd_label(args: argparse.Namespace) -> int:
    from .dataset import label_dataset
    seed = _env_seed(args.seed)
    manifest = label_dataset(args.data, backend=args.backend,
                             feature_noise=args.feature_noise,
                             mask_noise=args.mask_noise,
                             overlap=args.overlap,
                             clip_seconds=args.clip_seconds,
                             seed=0 if seed is None else seed)
    _emit({"command": "label", "data": args.data, **manifest})
    return 0


def _cmd_train(args: argparse.Namespace) -> int:
    from .train import train
    overrides = {"stage": args.stage, "data_dir": args.data_dir,
                 "seed": args.seed, "train_steps": args.steps,
                 "step_size": args.step_size, "batch_size": args.batch_size}
    if args.no_condition_labels:
        overrides["condition_labels"] = False
    cfg = load_run_config(args.config, overrides)
    summary = train(cfg, args.checkpoint, log_path=args.log, resume=args.resume)
    _emit({"command": "train", **summary})
    return 0


def _cmd_generate(args: argparse.Namespace) -> int:
    from .generate import generate_dataset
    seed = _env_seed(args.seed)
    manifest = generate_dataset(
        args.data, args.out, args.m2v_ckpt, s2m_path=args.s2m_ckpt,
        mode=args.mode, ids=args.sample_id or None, split=args.split,
        seed=0 if seed is None else seed, stride=args.stride,
        ablate_seg=args.ablate_seg)
    _emit({"command": "generate", "out": args.out, **manifest})
    return 0


def _cmd_evaluate(args: argparse.Namespace) -> int:
    from .evaluate import evaluate_dirs
    ids = args.sample_id
    if ids is None and args.split is not None:
        from .dataset import split_samples
        ids = split_samples(args.real, args.split)
    report = evaluate_dirs(args.real, args.gen, report_path=args.report,
                           iou_threshold=args.iou_threshold, ids=ids,
                           gen_boxes=args.gen_boxes)
    _emit({"command": "evaluate", "report_path": args.report, **report})
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hierasurg",
        description="Two-stage hierarchical surgical video synthesis pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-data", help="write a synthetic scene dataset")
    p.add_argument("--config", default=None, help="JSON run config")
    p.add_argument("--out", default=None, help="dataset directory (default: config data_dir)")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--force", action="store_true",
                   help="allow writing into a non-empty directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--fps", type=int, default=None, choices=(1, 8))
    p.add_argument("--data-dir", default=None)
    p.add_argument("--stage", default=None, choices=("s2m", "m2v"))
    p.set_defaults(func=_cmd_make_data)

    p = sub.add_parser("label", help="auto-label a dataset over overlapping clips")
    p.add_argument("--data", required=True)
    p.add_argument("--backend", default="oracle", choices=("oracle", "noisy-oracle"))
    p.add_argument("--feature-noise", type=float, default=0.0)
    p.add_argument("--mask-noise", type=float, default=0.0)
    p.add_argument("--overlap", type=float, default=0.5)
    p.add_argument("--clip-seconds", type=int, default=16)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_label)

    p = sub.add_parser("train", help="train one stage")
    p.add_argument("--config", default=None)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--log", default=None, help="loss CSV path")
    p.add_argument("--resume", action="store_true")
    p.add_argument("--stage", default=None, choices=("s2m", "m2v"))
    p.add_argument("--data-dir", default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--step-size", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--no-condition-labels", action="store_true",
                   help="drop phase/triplet conditioning (ablation)")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("generate", help="generate clips conditioned on dataset samples")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--m2v-ckpt", required=True)
    p.add_argument("--s2m-ckpt", default=None)
    p.add_argument("--mode", default="full", choices=("full", "m2v_only"))
    p.add_argument("--split", default="test", choices=("train", "test", "all"))
    p.add_argument("--sample-id", action="append", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--ablate-seg", action="store_true",
                   help="zero segmentation tokens (ablation)")
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("evaluate", help="paired metric report")
    p.add_argument("--real", required=True)
    p.add_argument("--gen", required=True)
    p.add_argument("--report", default=None)
    p.add_argument("--iou-threshold", type=float, default=0.5)
    p.add_argument("--split", default=None, choices=("train", "test", "all"),
                   help="restrict to the real dir's split")
    p.add_argument("--sample-id", action="append", default=None)
    p.add_argument("--gen-boxes", default="panoptic", choices=("panoptic", "video"),
                   help="generated-side maps: stored panoptic or re-derived from pixels")
    p.set_defaults(func=_cmd_evaluate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
