"""Command-line entry points: train, embed, extract, evaluate."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from stegattn.pipeline import (
    STAGES,
    RunConfig,
    StrategySpec,
    cmd_embed,
    cmd_evaluate,
    cmd_extract,
    cmd_train,
)


def _load_config(args) -> RunConfig:
    if args.config is not None:
        config = RunConfig.load(args.config)
    else:
        config = RunConfig()
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
    if getattr(args, "output_dir", None) is not None:
        config.output_dir = args.output_dir
    return config


def _compose_strategy(args, config: RunConfig) -> str:
    """Apply --strategy/--lsm/--ps-limit-bpp overrides to the config."""
    spec = StrategySpec.parse(args.strategy or config.strategy)
    lsm_k = args.lsm if args.lsm is not None else spec.lsm_k
    ps_limit = args.ps_limit_bpp if args.ps_limit_bpp is not None else spec.ps_limit_bpp
    return StrategySpec(fusion=spec.fusion, lsm_k=lsm_k, ps_limit_bpp=ps_limit).name


def _add_knob_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--strategy", help="strategy name, e.g. Mean-LSM-1 or Min-LSM-1-PS-0.8")
    p.add_argument("--lsm", type=int, help="override the masked plane count")
    p.add_argument("--ps-seed", type=int, help="permutative straddling seed")
    p.add_argument("--ps-limit-bpp", type=float, help="override the straddling bpp budget")
    p.add_argument("--seed", type=int, help="root seed override")
    p.add_argument("--no-finetuned", action="store_true", help="use pre-finetune checkpoints")


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="stegattn",
        description="attention-guided adaptive LSB steganography",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run the training pipeline")
    p_train.add_argument("--config", help="YAML run configuration")
    p_train.add_argument("--output-dir", help="override the config output directory")
    p_train.add_argument("--seed", type=int, help="root seed override")
    p_train.add_argument(
        "--stages",
        help=f"comma-separated subset of {','.join(STAGES)} (default: all)",
    )

    p_embed = sub.add_parser("embed", help="embed a payload file into a cover image")
    p_embed.add_argument("--config", help="YAML run configuration")
    p_embed.add_argument("--cover", required=True)
    p_embed.add_argument("--payload", required=True)
    p_embed.add_argument("--checkpoints", required=True, help="training output directory")
    p_embed.add_argument("--output", required=True, help="stego PNG path")
    p_embed.add_argument("--save-plan", help="write the embedding plan (for oracle extraction)")
    _add_knob_flags(p_embed)

    p_extract = sub.add_parser("extract", help="recover a payload from a stego image")
    p_extract.add_argument("--config", help="YAML run configuration")
    p_extract.add_argument("--stego", required=True)
    p_extract.add_argument("--checkpoints", required=True)
    p_extract.add_argument("--output", required=True, help="recovered payload path")
    p_extract.add_argument("--manifest", help="embed manifest (defaults to <stego>.manifest.json)")
    p_extract.add_argument("--oracle-plan", help="plan file from embed --save-plan")
    p_extract.add_argument("--reference", help="reference payload for BSER reporting")
    _add_knob_flags(p_extract)

    p_eval = sub.add_parser("evaluate", help="steganalysis and distortion report")
    p_eval.add_argument("--config", help="YAML run configuration")
    p_eval.add_argument("--checkpoints", required=True)
    p_eval.add_argument("--output", required=True, help="report directory")
    p_eval.add_argument("--corpus", help="image folder (default: synthetic photo corpus)")
    p_eval.add_argument(
        "--strategies", help="comma-separated strategy names (default: config strategy)"
    )
    p_eval.add_argument("--seed", type=int, help="root seed override")
    p_eval.add_argument("--no-finetuned", action="store_true")

    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )

    if args.command == "train":
        config = _load_config(args)
        stages = args.stages.split(",") if args.stages else None
        digests = cmd_train(config, stages=stages)
        for kind, digest in digests.items():
            print(f"{kind}: {digest}")
        return 0

    if args.command == "embed":
        config = _load_config(args)
        manifest = cmd_embed(
            cover_path=args.cover,
            payload_path=args.payload,
            checkpoint_dir=args.checkpoints,
            output_path=args.output,
            config=config,
            strategy=_compose_strategy(args, config),
            ps_seed=args.ps_seed,
            use_finetuned=not args.no_finetuned,
            save_plan_path=args.save_plan,
        )
        print(json.dumps(manifest, indent=2, sort_keys=True))
        return 0

    if args.command == "extract":
        config = _load_config(args)
        report = cmd_extract(
            stego_path=args.stego,
            checkpoint_dir=args.checkpoints,
            output_path=args.output,
            config=config,
            strategy=args.strategy,
            ps_seed=args.ps_seed,
            manifest_path=args.manifest,
            oracle_plan_path=args.oracle_plan,
            reference_path=args.reference,
            use_finetuned=not args.no_finetuned,
        )
        print(json.dumps(report, indent=2, sort_keys=True))
        if "bser_percent" in report:
            print(f"BSER: {report['bser_percent']:.4f}%")
        return 0

    if args.command == "evaluate":
        config = _load_config(args)
        corpus = None
        if args.corpus:
            from stegattn.dataset import load_folder

            corpus = load_folder(args.corpus)
        summary = cmd_evaluate(
            checkpoint_dir=args.checkpoints,
            output_dir=args.output,
            config=config,
            corpus=corpus,
            strategies=args.strategies.split(",") if args.strategies else None,
            seed=args.seed,
            use_finetuned=not args.no_finetuned,
        )
        print(json.dumps(summary, indent=2, sort_keys=True))
        return 0

    return 1


if __name__ == "__main__":
    sys.exit(main())
