"""illumsplat command line: train, render, eval, selfcheck.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .errors import (CheckpointFormatError, DatasetError, InvalidInputError, InvalidParameterError,
                     NumericalError)
from .shader import VARIANTS

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class ConfigError(Exception):
    pass


def _background(text):
    if text in ("white", "black"):
        return (1.0, 1.0, 1.0) if text == "white" else (0.0, 0.0, 0.0)
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad background {text!r}") from None
    if len(vals) != 3 or not all(0.0 <= v <= 1.0 for v in vals):
        raise argparse.ArgumentTypeError("background must be white, black or r,g,b in [0,1]")
    return vals


def load_scene(scene: str, background, resolution=64):
    """``probe`` / ``probe:SEED`` builds the synthetic probe scene, anything else is a dataset dir."""
    from .data import generate_probe_scene, load_dataset

    if scene == "probe" or scene.startswith("probe:"):
        seed = int(scene.split(":", 1)[1]) if ":" in scene else 0
        return generate_probe_scene(seed, resolution=resolution, background=background)[0]
    return load_dataset(scene, background=background)


def _add_common(p):
    p.add_argument("--scene", default="probe",
                   help="dataset directory (transforms_*.json) or probe[:SEED] (default: probe)")
    p.add_argument("--background", type=_background, default=(1.0, 1.0, 1.0),
                   help="white, black or r,g,b (default: white)")
    p.add_argument("--probe-res", type=int, default=64, help="probe scene image size (default: 64)")
    p.add_argument("--workers", type=int, default=1,
                   help="rasteriser threads; 1 is bit-deterministic (default: 1)")


def build_parser():
    parser = argparse.ArgumentParser(prog="illumsplat", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="optimise a scene and write a checkpoint + loss log")
    _add_common(t)
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--iters", type=int, default=3000, help="total iterations (default: 3000)")
    t.add_argument("--specular-start", type=int, default=None,
                   help="last diffuse-only iteration (default: 10%% of --iters)")
    t.add_argument("--shrink-at", type=int, default=None,
                   help="iteration of the grid shrink (default: --iters/2)")
    t.add_argument("--grid-res", type=int, default=32, help="illumination grid resolution (default: 32)")
    t.add_argument("--r-components", type=int, default=16, help="VM components (default: 16)")
    t.add_argument("--feature-dim", type=int, default=24, help="illumination feature size (default: 24)")
    t.add_argument("--variant", choices=VARIANTS, default="full", help="shading variant (default: full)")
    t.add_argument("--n-init", type=int, default=1000, help="initial random Gaussians (default: 1000)")
    t.add_argument("--seed", type=int, default=0, help="root seed for all random streams (default: 0)")
    t.add_argument("--checkpoint-every", type=int, default=0,
                   help="also write checkpoint_<iter>.bin every N iterations (default: 0, off)")

    r = sub.add_parser("render", help="render dataset poses from a checkpoint to PNG files")
    _add_common(r)
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--split", choices=("train", "test"), default="test")
    r.add_argument("--out", required=True, help="output directory")

    e = sub.add_parser("eval", help="PSNR/SSIM per view as JSON lines, then the averages")
    _add_common(e)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--split", choices=("train", "test"), default="test")
    e.add_argument("--out", default=None, help="write JSON lines here instead of stdout")

    s = sub.add_parser("selfcheck", help="run the oracle and gradient suites at small sizes")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--instances", type=int, default=5, help="random instances per gradient check")
    s.add_argument("--inject-sign-flip", action="append", default=[], metavar="CHECK",
                   help=argparse.SUPPRESS)
    return parser


def cmd_train(args):
    from .data import save_checkpoint
    from .trainer import TrainConfig, Trainer, TrainSchedule

    if args.iters < 0:
        raise ConfigError("--iters must be non-negative")
    try:
        schedule = TrainSchedule(total_iters=args.iters, specular_start=args.specular_start,
                                 shrink_at=args.shrink_at)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if args.grid_res < 2 or args.r_components < 1 or args.feature_dim < 1 or args.workers < 1:
        raise ConfigError("grid-res >= 2, r-components >= 1, feature-dim >= 1, workers >= 1 required")
    config = TrainConfig(variant=args.variant, n_init=args.n_init, grid_res=args.grid_res,
                         r_components=args.r_components, feature_dim=args.feature_dim,
                         seed=args.seed, workers=args.workers, schedule=schedule)
    dataset = load_scene(args.scene, args.background, args.probe_res)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trainer = Trainer(dataset, config)
    with open(out / "loss.jsonl", "w") as log:
        def on_step(rec, tr):
            log.write(json.dumps(rec) + "\n")
            if args.checkpoint_every and rec["iteration"] % args.checkpoint_every == 0:
                m = tr.model
                save_checkpoint(out / f"checkpoint_{rec['iteration']}.bin", m.gaussians, m.field,
                                m.shader, rec["iteration"])

        try:
            trainer.run(callback=on_step)
        finally:
            m = trainer.model
            save_checkpoint(out / "checkpoint.bin", m.gaussians, m.field, m.shader,
                            trainer.state.iteration)
    return EXIT_OK


def _model_from_checkpoint(path):
    from .data import load_checkpoint
    from .trainer import Model

    gaussians, field, shader, _ = load_checkpoint(path)
    return Model(gaussians, field, shader)


def cmd_render(args):
    from .data import save_image
    from .render import render
    from .rasterizer import set_workers

    set_workers(args.workers)
    model = _model_from_checkpoint(args.checkpoint)
    dataset = load_scene(args.scene, args.background, args.probe_res)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, (view, _) in enumerate(dataset.split(args.split)):
        img = render(model.gaussians, model.field, model.shader, view, dataset.background).rgb
        save_image(out / f"{args.split}_{i:03d}.png", img)
    return EXIT_OK


def cmd_eval(args):
    from .rasterizer import set_workers
    from .trainer import evaluate

    set_workers(args.workers)
    model = _model_from_checkpoint(args.checkpoint)
    dataset = load_scene(args.scene, args.background, args.probe_res)
    records = evaluate(model, dataset.split(args.split), dataset.background)
    for r in records:
        r["split"] = args.split
    summary = {"split": args.split, "views": len(records),
               "mean_psnr": float(np.mean([r["psnr"] for r in records])) if records else None,
               "mean_ssim": float(np.mean([r["ssim"] for r in records])) if records else None}
    text = "".join(json.dumps(r) + "\n" for r in records + [summary])
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_selfcheck(args):
    from .selfcheck import format_report, run_selfcheck

    results = run_selfcheck(seed=args.seed, inject=tuple(args.inject_sign_flip),
                            instances=args.instances)
    print(format_report(results))
    return EXIT_OK if all(r.passed for r in results) else 1


COMMANDS = {"train": cmd_train, "render": cmd_render, "eval": cmd_eval, "selfcheck": cmd_selfcheck}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, InvalidParameterError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DatasetError, CheckpointFormatError, InvalidInputError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
