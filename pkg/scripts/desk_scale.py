"""Desk-scale learning run: generate, train octhu:4 for 40 epochs, score the held-out split.

Usage: python scripts/desk_scale.py --task boundary --count 300 --out runs/boundary
       python scripts/desk_scale.py --task text --count 200 --out runs/text
"""

import argparse
from pathlib import Path

from octoseg.cli import main


def run(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--task", choices=("boundary", "text"), default="boundary")
    ap.add_argument("--count", type=int, default=300)
    ap.add_argument("--size", type=int, default=96)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--epochs", type=int, default=40)
    ap.add_argument("--scale", type=int, default=4)
    ap.add_argument("--out", default="runs/desk")
    args = ap.parse_args(argv)
    out = Path(args.out)
    steps = [
        ["gen-data", "--task", args.task, "--count", str(args.count), "--size", str(args.size),
         "--seed", str(args.seed), "--out", str(out / "data")],
        ["train", "--train-manifest", str(out / "data" / "train.manifest"), "--model", "octhu",
         "--scale", str(args.scale), "--input-size", str(args.size), "--epochs", str(args.epochs),
         "--out", str(out / "run")],
        ["eval", "--checkpoint", str(out / "run" / "last.ckpt"), "--manifest", str(out / "data" / "test.manifest"),
         "--out", str(out / "eval")],
    ]
    for cmd in steps:
        code = main(cmd)
        if code:
            return code
    return 0


if __name__ == "__main__":
    raise SystemExit(run())
