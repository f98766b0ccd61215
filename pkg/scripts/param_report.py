"""Parameter, MAC and checkpoint-size comparison of OctHU-PageScan and the U-Net baseline.

Usage: python scripts/param_report.py [--input-size 512] [--out DIR]
"""

import argparse

from octoseg.cli import main
from octoseg.models import ArchSpec, model_macs, model_params, plain_clone_arch


def run(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--input-size", type=int, default=512)
    ap.add_argument("--out")
    args = ap.parse_args(argv)
    cmd = ["inspect", "--compare", "octhu:16", "unet:64", "--input-size", str(args.input_size)]
    if args.out:
        cmd += ["--out", args.out]
    code = main(cmd)
    arch = ArchSpec("octhu", 16, args.input_size)
    plain = plain_clone_arch(arch)
    print(f"# octave vs plain convolutions at equal widths ({args.input_size}px)")
    print(f"params: {model_params(arch)} vs {model_params(plain)}")
    print(f"macs: {model_macs(arch)} vs {model_macs(plain)} (ratio {model_macs(arch) / model_macs(plain):.4f})")
    return code


if __name__ == "__main__":
    raise SystemExit(run())
