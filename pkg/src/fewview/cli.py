"""Command-line surface: train, render, eval, match, make-toy.

Every command exits 0 on success; failures print a single machine-readable
line `error: <ErrorClass>: <message>` to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import dataset as dsio
from .correspondence import builtin_match, ingest_matches, save_matches
from .errors import FewViewError
from .renderer import render_forward
from .scene import load_ply
from .trainer import TrainConfig, run_training


def _cmd_train(args) -> int:
    data = dsio.load_dataset(args.data)
    cfg = TrainConfig.from_file(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        cfg.seed = args.seed

    matchsets = []
    matches_path = args.matches or os.path.join(args.data, "matches.json")
    if os.path.exists(matches_path):
        matchsets, _ = ingest_matches(matches_path, data.view_sizes())

    scene = None
    if args.init and args.init != "random":
        scene = load_ply(args.init)
    os.makedirs(args.out, exist_ok=True)
    scene, _ = run_training(data, matchsets, cfg, scene=scene, out_dir=args.out)
    print(f"trained {len(scene)} gaussians -> {os.path.join(args.out, 'scene.ply')}")
    return 0


def _cmd_render(args) -> int:
    data = dsio.load_dataset(args.data)
    scene = load_ply(args.checkpoint)
    os.makedirs(args.out, exist_ok=True)
    indices = data.indices(args.split)
    for i in indices:
        buf, _ = render_forward(scene, data.views[i])
        name = data.names[i] or f"frame_{i:03d}"
        dsio.save_png(os.path.join(args.out, f"{name}.png"),
                      np.clip(buf.color, 0.0, 1.0))
        dsio.save_pfm(os.path.join(args.out, f"{name}.pfm"), buf.depth)
    print(f"rendered {len(indices)} {args.split} views -> {args.out}")
    return 0


def _cmd_eval(args) -> int:
    data = dsio.load_dataset(args.data)
    scene = load_ply(args.checkpoint)
    split = args.split
    indices = data.indices(split) or list(range(len(data)))
    rendered = [np.clip(render_forward(scene, data.views[i])[0].color, 0.0, 1.0)
                for i in indices]
    targets = [data.images[i] for i in indices]
    report = dsio.compute_metrics(rendered, targets)
    doc = {
        "split": split,
        "views": [data.names[i] for i in indices],
        "per_view_psnr": report.per_view_psnr,
        "per_view_ssim": report.per_view_ssim,
        "mean_psnr": report.mean_psnr,
        "mean_ssim": report.mean_ssim,
        "notes": report.notes,
    }
    with open(args.out, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=1)
    print(f"mean_psnr={report.mean_psnr:.4f} mean_ssim={report.mean_ssim:.4f}")
    return 0


def _cmd_match(args) -> int:
    data = dsio.load_dataset(args.data)
    train = data.train_indices
    matchsets = []
    for a, b in zip(train, train[1:]):
        matchsets.append(builtin_match(data.images[a], data.images[b],
                                       view_i=a, view_j=b))
    save_matches(args.out, matchsets)
    print(f"matched {len(matchsets)} view pairs -> {args.out}")
    return 0


def _cmd_make_toy(args) -> int:
    _, data, matchsets = dsio.generate_toy_scene(args.seed)
    os.makedirs(args.out, exist_ok=True)
    dsio.export_dataset(data, args.out)
    save_matches(os.path.join(args.out, "matches.json"), matchsets)
    print(f"toy dataset ({len(data)} views, "
          f"{sum(len(m) for m in matchsets)} matches) -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fewview",
        description="Few-shot novel view synthesis with 3D Gaussian splatting")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="optimize a scene on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--init", default="random",
                   help="'random' or a PLY checkpoint path")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--matches", default=None,
                   help="match file (default: DATA/matches.json if present)")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("render", help="render a checkpoint's views")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("eval", help="compute image metrics for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("match", help="run the built-in matcher on train views")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--builtin", action="store_true",
                   help="accepted for compatibility; the built-in matcher is "
                        "the only bundled one")
    p.set_defaults(func=_cmd_match)

    p = sub.add_parser("make-toy", help="generate a synthetic toy dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_make_toy)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FewViewError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
