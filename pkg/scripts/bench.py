"""Per-image inference time of octhu:16 vs unet:64 under the pinned protocol.

Usage: python scripts/bench.py [--sizes 256 512] [--images 3] [--out DIR]
"""

import argparse

from octoseg.cli import main


def run(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", nargs="+", default=["256", "512"])
    ap.add_argument("--images", default="3")
    ap.add_argument("--out")
    args = ap.parse_args(argv)
    cmd = ["bench", "--models", "octhu:16", "unet:64", "--sizes", *args.sizes, "--images", args.images]
    if args.out:
        cmd += ["--out", args.out]
    return main(cmd)


if __name__ == "__main__":
    raise SystemExit(run())
