"""Single entry-point command line tool.

Subcommands: build-dataset, train, sample, evaluate, ablate, demo.
Every command accepts --config (or the DTPSR_CONFIG environment variable)
plus repeatable --set section.field=value overrides; precedence is
CLI > environment > file > defaults.

Exit codes: 0 success, 1 validation error (bad arguments or config),
2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .ablation import GRID_NAMES, builtin_grid, run_ablation
from .config import ConfigError, RunConfig, resolve_config, save_config_file
from .dataset import BuildConfig, build_dataset, load_manifest, save_png
from .latent import to_uint8
from .pipeline import RestorationPipeline, run_demo
from .priors import CaptionSet
from .train import train_model

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


class CliValidationError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliValidationError(message)


def _add_common(parser):
    parser.add_argument("--config", help="path to a JSON run-config file")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="SECTION.FIELD=VALUE",
                        help="override one config value (repeatable)")
    parser.add_argument("--seed", type=int, default=None,
                        help="seed override for this command")


def _add_guidance_flags(parser):
    parser.add_argument("--cfg-mode", choices=("none", "single", "multi"))
    parser.add_argument("--lambda-s", type=float, dest="lambda_s")
    parser.add_argument("--neg-global")
    parser.add_argument("--neg-lf", action="append")
    parser.add_argument("--neg-hf", action="append")


def build_parser() -> _Parser:
    parser = _Parser(prog="textsr",
                     description="Text-prior-guided diffusion super-resolution")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-dataset", help="generate a synthetic dataset")
    _add_common(p)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--corrupt-p", type=float, default=None)

    p = sub.add_parser("train", help="train a model on a manifest")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", default=None)
    p.add_argument("--progress", action="store_true")

    p = sub.add_parser("sample", help="restore one LR image")
    _add_common(p)
    _add_guidance_flags(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--manifest", help="take LR image and captions from a manifest")
    p.add_argument("--index", type=int, default=0, help="record index in the manifest")
    p.add_argument("--lr-image", help="path to an LR image file")
    p.add_argument("--captions-json",
                   help="JSON file with keys global, lf, hf (used with --lr-image)")
    p.add_argument("--steps", type=int, default=None)

    p = sub.add_parser("evaluate", help="metric report over a manifest")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--grid", choices=GRID_NAMES, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--limit", type=int, default=None)

    p = sub.add_parser("ablate", help="run one ablation grid")
    _add_common(p)
    p.add_argument("--grid", choices=GRID_NAMES, required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--limit", type=int, default=None)

    p = sub.add_parser("demo", help="automated segment -> caption -> restore chain")
    _add_common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--corrupt-p", type=float, default=0.0)

    p = sub.add_parser("init-config", help="write the default config file")
    p.add_argument("--out", required=True)
    return parser


def _config_from_args(args) -> RunConfig:
    overrides = []
    for item in args.overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects SECTION.FIELD=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides.append((key.strip(), value.strip()))
    for attr, dotted in (("cfg_mode", "guidance.mode"),
                         ("lambda_s", "guidance.lambda_s"),
                         ("neg_global", "guidance.neg_global")):
        value = getattr(args, attr, None)
        if value is not None:
            overrides.append((dotted, str(value)))
    for attr, dotted in (("neg_lf", "guidance.neg_lf"), ("neg_hf", "guidance.neg_hf")):
        value = getattr(args, attr, None)
        if value:
            overrides.append((dotted, json.dumps(list(value))))
    return resolve_config(path=args.config, cli_overrides=overrides)


def _cmd_build_dataset(args) -> int:
    config = _config_from_args(args)
    ds = config.dataset
    build = BuildConfig(canvas=ds.canvas, min_objects=ds.min_objects,
                        max_objects=ds.max_objects,
                        seed=args.seed if args.seed is not None else ds.seed,
                        corrupt_p=args.corrupt_p if args.corrupt_p is not None else ds.corrupt_p,
                        top_k=ds.top_k, degradation=ds.degradation())
    result = build_dataset(args.count, args.out, build)
    print(f"wrote {result.written} records ({result.skipped} skipped) "
          f"to {result.manifest_path}")
    return EXIT_OK


def _cmd_train(args) -> int:
    config = _config_from_args(args)
    if args.seed is not None:
        config.train.seed = args.seed
    ckpt = train_model(config, args.manifest, args.out, resume=args.resume,
                       progress=args.progress)
    print(f"checkpoint written to {ckpt}")
    return EXIT_OK


def _load_captions_json(path) -> CaptionSet:
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    return CaptionSet(global_caption=data["global"], lf_captions=list(data["lf"]),
                      hf_captions=list(data["hf"]))


def _cmd_sample(args) -> int:
    config = _config_from_args(args)
    pipeline = RestorationPipeline.from_checkpoint(args.ckpt)
    pipeline.bundle.config.guidance = config.guidance
    seed = args.seed if args.seed is not None else 0
    if args.manifest:
        records = load_manifest(args.manifest)
        if not 0 <= args.index < len(records):
            raise CliValidationError(f"record index {args.index} out of range")
        record = records[args.index]
        from .dataset import load_record_images
        _, lr_u8 = load_record_images(record, Path(args.manifest).parent)
        captions = record.captions
    elif args.lr_image and args.captions_json:
        from .dataset import load_png
        lr_u8 = load_png(args.lr_image)
        captions = _load_captions_json(args.captions_json)
    else:
        raise CliValidationError("provide --manifest or both --lr-image and "
                                 "--captions-json")
    result = pipeline.restore(lr_u8, captions, seed=seed,
                              guidance=config.guidance.to_spec(),
                              num_steps=args.steps)
    save_png(args.out, to_uint8(result.image))
    print(f"restored image written to {args.out}")
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    config = _config_from_args(args)
    seed = args.seed if args.seed is not None else config.eval.seed
    limit = args.limit if args.limit is not None else config.eval.limit
    grid_name = args.grid
    if grid_name is None:
        from .ablation import AblationConfig, AblationGrid
        grid = AblationGrid(name="default",
                            configs=[AblationConfig("full", {},
                                                    guidance_mode=config.guidance.mode)])
    else:
        grid = builtin_grid(grid_name, config.eval.robustness_corrupt_p)
    reports = run_ablation(grid, args.manifest, args.ckpt, seed=seed,
                           limit=limit, out_dir=args.out)
    for report in reports:
        print(f"{grid.name}/{report.name}: psnr {report.mean_psnr_db:.2f} dB, "
              f"ssim {report.mean_ssim:.4f}")
    return EXIT_OK


def _cmd_ablate(args) -> int:
    config = _config_from_args(args)
    seed = args.seed if args.seed is not None else config.eval.seed
    limit = args.limit if args.limit is not None else config.eval.limit
    grid = builtin_grid(args.grid, config.eval.robustness_corrupt_p)
    reports = run_ablation(grid, args.manifest, args.ckpt, seed=seed,
                           limit=limit, out_dir=args.out)
    for report in reports:
        print(f"{grid.name}/{report.name}: psnr {report.mean_psnr_db:.2f} dB, "
              f"ssim {report.mean_ssim:.4f}")
    return EXIT_OK


def _cmd_demo(args) -> int:
    _config_from_args(args)  # validate any overrides up front
    pipeline = RestorationPipeline.from_checkpoint(args.ckpt)
    seed = args.seed if args.seed is not None else 0
    report = run_demo(pipeline, args.out, seed=seed, corrupt_p=args.corrupt_p)
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_init_config(args) -> int:
    save_config_file(RunConfig(), args.out)
    print(f"default config written to {args.out}")
    return EXIT_OK


_COMMANDS = {
    "build-dataset": _cmd_build_dataset,
    "train": _cmd_train,
    "sample": _cmd_sample,
    "evaluate": _cmd_evaluate,
    "ablate": _cmd_ablate,
    "demo": _cmd_demo,
    "init-config": _cmd_init_config,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except CliValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, CliValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # runtime failure contract
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
