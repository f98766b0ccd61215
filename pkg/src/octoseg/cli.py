"""``octoseg`` command line: gen-data, train, eval, infer, inspect, bench.

Exit codes: 0 success, 2 configuration error, 3 I/O or file-format error,
4 numeric failure (NaN/Inf, diverged training).

Every subcommand that takes ``--out`` writes ``run.lock`` there: the resolved
options as ``key=value`` lines, loadable again with ``--config``.
"""

from __future__ import annotations

import argparse
import contextlib
import os
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, FormatError, NumericError, OctosegError

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4
LOCK_NAME = "run.lock"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def worker_threads() -> int:
    env = os.environ.get("OCTOSEG_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"OCTOSEG_THREADS must be an integer, got {env!r}") from None
        if n < 1:
            raise ConfigError(f"OCTOSEG_THREADS must be >= 1, got {n}")
        return n
    return os.cpu_count() or 1


def read_config_file(path) -> dict[str, str]:
    """``key=value`` lines; blank lines and ``#`` comments are skipped."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"{path}: cannot read config file ({exc})") from exc
    out = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{n}: expected key=value, got {line!r}")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def _apply_file_defaults(sub: argparse.ArgumentParser, values: dict[str, str]) -> None:
    actions = {a.dest: a for a in sub._actions if a.dest not in ("help", "config")}
    defaults = {}
    for key, raw in values.items():
        act = actions.get(key)
        if act is None:
            raise ConfigError(f"config file: unknown option {key!r} for {sub.prog}")
        if act.nargs in ("+", "*") or isinstance(act.nargs, int):
            conv = act.type or str
            defaults[key] = [conv(v) for v in raw.replace(",", " ").split()]
        elif isinstance(act, argparse._StoreTrueAction):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ConfigError(f"config file: {key} expects a boolean, got {raw!r}")
            defaults[key] = raw.lower() in ("true", "1", "yes")
        else:
            defaults[key] = raw
        act.required = False
    sub.set_defaults(**defaults)


def _lock_value(v) -> str:
    if isinstance(v, (list, tuple)):
        return " ".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_run_lock(out_dir, args: argparse.Namespace) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = [
        f"# octoseg {args.command}",
        f"# versions: octoseg={__version__} numpy={np.__version__} python={platform.python_version()}",
    ]
    for key in sorted(vars(args)):
        if key in ("command", "func", "config"):
            continue
        val = getattr(args, key)
        if val is None:
            continue
        lines.append(f"{key}={_lock_value(val)}")
    path = out / LOCK_NAME
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def _parse_ratios(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(","))
    except ValueError:
        raise ConfigError(f"bad --ratios {text!r}; expected e.g. 0.75,0.25") from None


# ---------------------------------------------------------------- commands


def cmd_gen_data(args) -> int:
    from .scenegen.augment import OPS
    from .scenegen.dataset import generate_scenes, write_split

    if args.count < 1:
        raise ConfigError(f"--count must be >= 1, got {args.count}")
    for op in args.augment or ():
        if op not in OPS:
            raise ConfigError(f"unknown augmentation {op!r}; expected one of {', '.join(OPS)}")
    ratios = _parse_ratios(args.ratios)
    names = ("train", "test") if len(ratios) == 2 else ("train", "val", "test") if len(ratios) == 3 else None
    if names is None:
        raise ConfigError("--ratios needs two (train,test) or three (train,val,test) values")
    write_run_lock(args.out, args)
    scenes = generate_scenes(args.task, args.count, args.size, args.seed, min(args.threads or worker_threads(), args.count),
                             augment_ops=tuple(args.augment or ()))
    manifests = write_split(scenes, args.out, ratios, args.seed, name=args.task, split_names=names)
    for split, m in manifests.items():
        print(f"{split}: {len(m)} records -> {Path(args.out) / (split + '.manifest')}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .scenegen.dataset import load_samples
    from .train import TrainConfig, train

    cfg = TrainConfig(learning_rate=args.lr, batch_size=args.batch_size, epochs=args.epochs,
                      beta1=args.beta1, beta2=args.beta2, eps=args.eps, seed=args.seed,
                      input_size=args.input_size, model=args.model,
                      scale=args.scale if args.scale is not None else (16 if args.model == "octhu" else 64),
                      train_manifest=str(args.train_manifest), val_manifest=str(args.val_manifest or ""),
                      checkpoint_every=args.checkpoint_every, dtype=args.dtype, augment=args.augment)
    if cfg.learning_rate <= 0 and not args.allow_zero_lr:
        raise ConfigError("learning rate must be > 0 (pass --allow-zero-lr for a frozen run)")
    if cfg.checkpoint_every < 1:
        raise ConfigError("--checkpoint-every must be >= 1")
    cfg.validate()
    args.scale = cfg.scale
    train_set = load_samples(args.train_manifest, cfg.input_size)
    val_set = load_samples(args.val_manifest, cfg.input_size) if args.val_manifest else None
    write_run_lock(args.out, args)
    print(f"training {cfg.model}:{cfg.scale} lr={cfg.learning_rate} batch={cfg.batch_size} "
          f"epochs={cfg.epochs} on {len(train_set[0])} samples")
    result = train(cfg, train_set, val_set, args.out, log=None if args.quiet else print)
    print(f"best val JCS {result.best_val_jcs:.4f}; checkpoints in {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .checkpoint import load_checkpoint
    from .evaluate import EvalReport, evaluate_manifest
    from .scenegen.dataset import read_manifest

    model = load_checkpoint(args.checkpoint, kind=args.expect_kind)
    size = args.input_size or model.arch.input_size
    manifest = read_manifest(args.manifest, check_files=False)
    with _blas_threads(1):
        report = evaluate_manifest(model, manifest, size, warmup=args.warmup, threshold=args.threshold,
                                   label=f"{model.kind}:{model.arch.scale}")
    out = Path(args.out)
    write_run_lock(out, args)
    (out / "report.txt").write_text(report.to_text(), encoding="utf-8")
    (out / "report.csv").write_text(EvalReport.CSV_HEADER + "\n" + report.csv_row() + "\n", encoding="utf-8")
    # per-image scores carry no timing and are byte-reproducible
    rows = ["index,image,jcs"] + [f"{i},{Path(p).name},{j:.10f}" for i, (p, j) in enumerate(zip(report.items, report.jcs))]
    (out / "per_image.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    sys.stdout.write(report.to_text())
    for f in report.failures:
        print(f"warning: {f}", file=sys.stderr)
    return EXIT_OK


def cmd_infer(args) -> int:
    from PIL import Image

    from .checkpoint import load_checkpoint
    from .evaluate import binarize
    from .scenegen.dataset import prepare_image, read_image, write_mask

    model = load_checkpoint(args.checkpoint)
    size = args.input_size or model.arch.input_size
    inputs: list[Path] = []
    for p in map(Path, args.inputs):
        inputs.extend(sorted(p.glob("*.png")) if p.is_dir() else [p])
    if not inputs:
        raise ConfigError("no input images given")
    out = Path(args.out)
    write_run_lock(out, args)
    for p in inputs:
        img = read_image(p)
        prob = model.predict(prepare_image(img, size)[None])[0]
        mask = binarize(prob, args.threshold)
        if mask.shape != img.shape:
            im = Image.fromarray(np.where(mask, 255, 0).astype(np.uint8))
            mask = np.asarray(im.resize(img.shape[::-1], Image.NEAREST)) >= 128
        dest = out / f"{p.stem}_mask.png"
        write_mask(dest, mask)
        print(f"{p} -> {dest}")
    return EXIT_OK


def _inspect_lines(arch, label: str) -> tuple[list[str], dict]:
    from .checkpoint import checkpoint_bytes
    from .models import build_model

    model = build_model(arch, seed=0)
    rows = model.layer_table()
    lines = [f"# {label}: kind={arch.kind} scale={arch.scale} alpha={arch.alpha} input={arch.input_size}",
             f"{'layer':<18}{'output (HxWxC)':>18}{'alpha':>7}{'params':>12}{'MACs':>16}"]
    for r in rows:
        c, h, w = r["shape"]
        lines.append(f"{r['name']:<18}{f'{h}x{w}x{c}':>18}{r['alpha']:>7.2f}{r['params']:>12,}{r['macs']:>16,}")
    params = sum(r["params"] for r in rows)
    macs = sum(r["macs"] for r in rows)
    size = len(checkpoint_bytes(model))
    lines += [f"total_params: {params}", f"total_macs: {macs}", f"checkpoint_bytes: {size}"]
    return lines, {"params": params, "macs": macs, "bytes": size}


def cmd_inspect(args) -> int:
    from .checkpoint import load_checkpoint
    from .models import ArchSpec, parse_model_ref

    if args.compare:
        archs = [parse_model_ref(r, args.input_size) for r in args.compare]
        labels = list(args.compare)
    elif args.checkpoint:
        m = load_checkpoint(args.checkpoint)
        archs, labels = [m.arch], [str(args.checkpoint)]
    else:
        scale = args.scale if args.scale is not None else (16 if args.model == "octhu" else 64)
        alpha = args.alpha if args.alpha is not None else (0.5 if args.model == "octhu" else 0.0)
        archs, labels = [ArchSpec(args.model, scale, args.input_size, alpha)], [f"{args.model}:{scale}"]
    out_lines, totals = [], []
    for arch, label in zip(archs, labels):
        lines, t = _inspect_lines(arch, label)
        out_lines += lines + [""]
        totals.append(t)
    if len(totals) == 2:
        a, b = totals
        out_lines += [f"# {labels[0]} vs {labels[1]}"]
        for key, name in (("params", "parameter"), ("macs", "MAC"), ("bytes", "storage")):
            out_lines.append(f"{name}_ratio: {a[key] / b[key]:.6f}")
            out_lines.append(f"{name}_reduction_pct: {100 * (1 - a[key] / b[key]):.3f}")
    text = "\n".join(out_lines).rstrip() + "\n"
    sys.stdout.write(text)
    if args.out:
        write_run_lock(args.out, args)
        (Path(args.out) / "inspect.txt").write_text(text, encoding="utf-8")
    return EXIT_OK


def cmd_bench(args) -> int:
    from .evaluate import bench, format_bench
    from .models import build_model, parse_model_ref

    for ref in args.models:
        parse_model_ref(ref)  # validate before any timing starts
    rows = []
    for size in args.sizes:
        models = {ref: build_model(parse_model_ref(ref, size), seed=args.seed) for ref in args.models}
        rows += bench(models, [size], args.images, args.warmup, args.seed)
    text = format_bench(rows)
    sys.stdout.write(text)
    if args.out:
        write_run_lock(args.out, args)
        (Path(args.out) / "bench.txt").write_text(text, encoding="utf-8")
        csv = ["model,size,images,mean_seconds"] + [
            f"{r['model']},{r['size']},{r['images']},{r['mean_seconds']:.6f}" for r in rows]
        (Path(args.out) / "bench.csv").write_text("\n".join(csv) + "\n", encoding="utf-8")
    return EXIT_OK


@contextlib.contextmanager
def _blas_threads(n: int | None):
    if n is None:
        yield
        return
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=n):
        yield


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="octoseg", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"octoseg {__version__}")
    subs = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def sub(name, func, help_):
        s = subs.add_parser(name, help=help_, description=help_)
        s.add_argument("--config", help="key=value file; explicit flags override its values")
        s.set_defaults(func=func)
        return s

    g = sub("gen-data", cmd_gen_data, "generate a synthetic boundary or text dataset")
    g.add_argument("--task", choices=("boundary", "text"), default="boundary")
    g.add_argument("--count", type=int, default=100)
    g.add_argument("--size", type=int, default=96)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--ratios", default="0.75,0.25", help="comma-separated split ratios (train,test[,..])")
    g.add_argument("--augment", nargs="*", default=[], help="augmentation ops applied to every scene")
    g.add_argument("--threads", type=int, default=None, help="worker threads (default: OCTOSEG_THREADS or cores)")
    g.add_argument("--out", required=True)

    t = sub("train", cmd_train, "train a model from manifests")
    t.add_argument("--train-manifest", required=True)
    t.add_argument("--val-manifest")
    t.add_argument("--model", choices=("octhu", "unet"), default="octhu")
    t.add_argument("--scale", type=int, default=None, help="base width (default 16 for octhu, 64 for unet)")
    t.add_argument("--input-size", type=int, default=96)
    t.add_argument("--epochs", type=int, default=40)
    t.add_argument("--lr", type=float, default=1e-4)
    t.add_argument("--batch-size", type=int, default=4)
    t.add_argument("--beta1", type=float, default=0.9)
    t.add_argument("--beta2", type=float, default=0.999)
    t.add_argument("--eps", type=float, default=1e-8)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--checkpoint-every", type=int, default=1)
    t.add_argument("--dtype", choices=("float32", "float64"), default="float32")
    t.add_argument("--augment", choices=("none", "dihedral"), default="dihedral",
                   help="random flips/quarter-turns of each training batch")
    t.add_argument("--allow-zero-lr", action="store_true")
    t.add_argument("--quiet", action="store_true")
    t.add_argument("--out", required=True)

    e = sub("eval", cmd_eval, "score a checkpoint on a manifest")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--input-size", type=int, default=None)
    e.add_argument("--expect-kind", choices=("octhu", "unet"), default=None)
    e.add_argument("--warmup", type=int, default=5)
    e.add_argument("--threshold", type=float, default=0.5)
    e.add_argument("--out", required=True)

    i = sub("infer", cmd_infer, "write a binary mask PNG for every input image")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("inputs", nargs="+", help="PNG files or directories of PNGs")
    i.add_argument("--input-size", type=int, default=None)
    i.add_argument("--threshold", type=float, default=0.5)
    i.add_argument("--out", required=True)

    s = sub("inspect", cmd_inspect, "per-layer parameter, MAC and storage report")
    s.add_argument("--model", choices=("octhu", "unet"), default="octhu")
    s.add_argument("--scale", type=int, default=None)
    s.add_argument("--alpha", type=float, default=None)
    s.add_argument("--input-size", type=int, default=512)
    s.add_argument("--compare", nargs=2, metavar="KIND:SCALE")
    s.add_argument("--checkpoint")
    s.add_argument("--out")

    b = sub("bench", cmd_bench, "time models under the pinned inference protocol")
    b.add_argument("--models", nargs="+", default=["octhu:16", "unet:64"])
    b.add_argument("--sizes", nargs="+", type=int, default=[256, 512])
    b.add_argument("--images", type=int, default=3)
    b.add_argument("--warmup", type=int, default=5)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out")
    return p


def _config_path(argv) -> str | None:
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if a.startswith("--config="):
            return a.split("=", 1)[1]
    return None


def parse_args(argv) -> argparse.Namespace:
    """Parse ``argv``; a ``--config`` file supplies defaults that explicit flags override."""
    parser = build_parser()
    cfg = _config_path(argv)
    if cfg is not None:
        choices = parser._subparsers._group_actions[0].choices
        command = next((a for a in argv if a in choices), None)
        if command is None:
            raise ConfigError("--config must follow a subcommand")
        _apply_file_defaults(choices[command], read_config_file(cfg))
    return parser.parse_args(argv)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
        env = os.environ.get("OCTOSEG_THREADS")
        with _blas_threads(worker_threads() if env else None):
            return args.func(args)
    except ConfigError as exc:
        print(f"octoseg: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, OSError) as exc:
        print(f"octoseg: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericError as exc:
        print(f"octoseg: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OctosegError, ValueError) as exc:
        print(f"octoseg: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
