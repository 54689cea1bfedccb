"""``tryon-lab`` command line: generate | train | evaluate | grid.

Errors are printed to stderr as one JSON object and the exit code is nonzero.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import DATA_ENV, ExperimentConfig, load_config
from .errors import TryonLabError


def _config(args):
    base = ExperimentConfig()
    if args.config:
        cfg, axes = load_config(args.config, base)
    else:
        cfg, axes = base, {}
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out is not None:
        changes["out_dir"] = args.out
    if getattr(args, "data", None):
        changes["dataset"] = args.data
    for item in getattr(args, "set", None) or []:
        from .config import coerce

        key, _, raw = item.partition("=")
        changes[key.strip()] = coerce(key.strip(), raw)
    return cfg.replace(**changes).validate(), axes


def cmd_generate(args):
    from .synthetic import SyntheticSpec, generate_synthetic

    h, w = args.size
    root = args.out or args.data
    out = {}
    for split, n in (("train", args.videos), ("test", args.test_videos)):
        if n:
            spec = SyntheticSpec(n, args.frames, (h, w), seed=args.seed or 0, split=split)
            m = generate_synthetic(root, spec)
            out[split] = {"videos": len(m.video_ids), "frames": m.total_frames}
    print(json.dumps({"root": str(root), **out}))


def cmd_train(args):
    from .harness import train

    cfg, _ = _config(args)
    state = train(cfg, resume=args.resume)
    last = state.epoch_history[-1] if state.epoch_history else {}
    print(json.dumps({"out_dir": str(state.out_dir), "epochs": state.epoch, "steps": state.step,
                      "checkpoint": str(state.checkpoint_path(state.epoch)), **last}))


def cmd_evaluate(args):
    from .harness import evaluate

    out = args.out or str(Path(args.checkpoint).resolve().parent.parent / "eval")
    report = evaluate(args.checkpoint, out_dir=out, split=args.split, dataset=args.data)
    o = report.overall
    print(json.dumps({"out_dir": out, "ssim_mean": o.ssim_mean, "ssim_std": o.ssim_std,
                      "psnr_mean": o.psnr_mean, "psnr_std": o.psnr_std, "frames": o.count}))


def cmd_grid(args):
    from .harness import run_grid

    cfg, axes = _config(args)
    results = run_grid(cfg, axes, cfg.out_dir)
    print(json.dumps({"out_dir": cfg.out_dir, "cells": [
        {"cell": r["cell"], "status": r["status"]} for r in results]}))
    return 0 if all(r["status"] == "ok" for r in results) else 3


def build_parser():
    p = argparse.ArgumentParser(prog="tryon-lab", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", help="key = value config file")
            sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--data", help=f"dataset root (default ${DATA_ENV})")

    g = sub.add_parser("generate", help="write a synthetic dataset")
    common(g, config=False)
    g.add_argument("--videos", type=int, default=8)
    g.add_argument("--test-videos", type=int, default=4)
    g.add_argument("--frames", type=int, default=24)
    g.add_argument("--size", type=int, nargs=2, default=(64, 48), metavar=("H", "W"))
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a model")
    common(t)
    t.add_argument("--resume", help="checkpoint to continue from")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="score a checkpoint")
    common(e, config=False)
    e.add_argument("checkpoint")
    e.add_argument("--split")
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("grid", help="one-factor-at-a-time ablation grid")
    common(r)
    r.set_defaults(func=cmd_grid)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "generate" and not (args.out or args.data):
        import os

        args.data = os.environ.get(DATA_ENV, "data")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args) or 0
    except TryonLabError as exc:
        print(json.dumps(exc.to_dict()), file=sys.stderr)
        return 2
    except OSError as exc:
        print(json.dumps({"error": "IoFailure", "message": str(exc)}), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
