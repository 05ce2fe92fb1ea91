"""Command-line interface.

Subcommands: degrade, pipeline, render, metrics, search-params.
Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import degrade as degrade_mod
from . import devo, pipeline, scenes, splatter, trainer
from .degrade import DegradeConfig, load_cameras
from .imagekit import psnr, read_image, ssim, write_image, write_metrics_csv


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="darksplat")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("degrade", help="generate a synthetic degraded dataset")
    p.add_argument("--scene", required=True, help="scene JSON path or builtin:<name>")
    p.add_argument("--cfg", help="degradation config JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--views", type=int, default=10)
    p.add_argument("--holdout", type=int, default=2)
    p.add_argument("--size", type=int, default=64)

    p = sub.add_parser("pipeline", help="run the progressive enhancement loop")
    p.add_argument("--data", required=True)
    p.add_argument("--config", help="pipeline config JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--rounds", type=int)
    p.add_argument("--no-pie", action="store_true")
    p.add_argument("--no-ne", action="store_true")
    p.add_argument("--seed", type=int)
    p.add_argument("--resume", action="store_true")

    p = sub.add_parser("render", help="render views from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--cameras", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("metrics", help="PSNR/SSIM between matching PNG directories")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--csv", required=True)

    p = sub.add_parser("search-params", help="recover enhancement parameters")
    p.add_argument("--render", required=True, dest="render_path")
    p.add_argument("--target", required=True)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _cmd_degrade(args) -> int:
    if args.scene.startswith("builtin:"):
        cloud, cams = scenes.builtin_scene(
            args.scene.split(":", 1)[1], n_views=args.views, image_size=args.size
        )
    else:
        with open(args.scene) as f:
            scene = json.load(f)
        cloud = splatter.cloud_from_bytes(bytes.fromhex(scene["cloud_hex"]))
        cams = [splatter.Camera.from_dict(d) for d in scene["cameras"]]
    if args.cfg:
        with open(args.cfg) as f:
            cfg = DegradeConfig.from_dict(json.load(f))
        cfg = replace(cfg, seed=args.seed)
    else:
        cfg = DegradeConfig(seed=args.seed)
    degrade_mod.make_dataset(cloud, cams, cfg, args.out, holdout=args.holdout)
    print(f"dataset written to {args.out} ({len(cams)} views, holdout {args.holdout})")
    return 0


def _cmd_pipeline(args) -> int:
    if args.resume:
        record = pipeline.resume(args.out)
    else:
        if args.config:
            with open(args.config) as f:
                cfg = pipeline.PipelineConfig.from_dict(json.load(f))
        else:
            cfg = pipeline.PipelineConfig()
        overrides = {"output_dir": args.out}
        if args.rounds is not None:
            overrides["rounds"] = args.rounds
        if args.no_pie:
            overrides["enable_pie"] = False
        if args.no_ne:
            overrides["enable_ne"] = False
        if args.seed is not None:
            overrides["seed"] = args.seed
        cfg = replace(cfg, **overrides)
        record = pipeline.run(args.data, cfg)
    print(f"run complete: {record.completed_rounds} rounds in {args.out}")
    return 0


def _cmd_render(args) -> int:
    cloud, mlp, _ = pipeline.load_checkpoint(args.checkpoint)
    cams = load_cameras(args.cameras)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(trainer.render_views(cloud, mlp, cams)):
        write_image(out / f"{i:04d}.png", img)
    print(f"{len(cams)} views rendered to {args.out}")
    return 0


def _cmd_metrics(args) -> int:
    pred_dir, gt_dir = Path(args.pred), Path(args.gt)
    rows = []
    for pred_path in sorted(pred_dir.glob("*.png")):
        gt_path = gt_dir / pred_path.name
        if not gt_path.exists():
            raise FileNotFoundError(f"no ground truth for {pred_path.name}")
        a, b = read_image(pred_path), read_image(gt_path)
        rows.append((pred_path.stem, psnr(a, b), ssim(a, b)))
    write_metrics_csv(args.csv, rows)
    print(f"{len(rows)} views scored; CSV written to {args.csv}")
    return 0


def _cmd_search_params(args) -> int:
    rendered = read_image(args.render_path)
    target = read_image(args.target)
    result = devo.search_params(rendered, target, devo.DEConfig(seed=args.seed))
    print(
        f"{result.params.alpha:.6f},{result.params.gamma:.6f},"
        f"{result.loss:.6g},{result.iterations}"
    )
    return 0


_COMMANDS = {
    "degrade": _cmd_degrade,
    "pipeline": _cmd_pipeline,
    "render": _cmd_render,
    "metrics": _cmd_metrics,
    "search-params": _cmd_search_params,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 1 if e.code not in (0, None) else 0
    try:
        return _COMMANDS[args.command](args)
    except Exception as e:  # surfaced as exit code 2 per the CLI contract
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
