"""Jaccard evaluation, binarization and inference timing.

Timing protocol: batch size 1, one BLAS thread, five untimed warm-up forward
passes on the first image, then the mean wall-clock of one forward pass per
test image. Only model compute is timed; file I/O and resizing happen before
the clock starts.
"""

from __future__ import annotations

import contextlib
import math
import time
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .errors import NotBinaryError, ShapeError

TIMING_PROTOCOL = "batch=1 threads=1 warmup=5 forward passes; mean per-image model forward seconds, I/O excluded"


def binarize(pred, threshold: float = 0.5) -> np.ndarray:
    """Boolean mask, ``True`` where ``pred >= threshold``."""
    return np.asarray(pred) >= threshold


def _as_binary(a, what: str) -> np.ndarray:
    a = np.asarray(a)
    if a.dtype == bool:
        return a
    if not np.isin(a, (0, 1)).all():
        raise NotBinaryError(f"{what} mask is not binary; binarize it first")
    return a.astype(bool)


def jaccard(pred_mask, gt_mask) -> float:
    """|A & B| / |A | B| over foreground pixels; two empty masks score 1.0."""
    a = _as_binary(pred_mask, "predicted")
    b = _as_binary(gt_mask, "ground-truth")
    if a.shape != b.shape:
        raise ShapeError(f"jaccard: shapes {a.shape} and {b.shape} differ")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def jaccard_per_image(pred_masks, gt_masks) -> np.ndarray:
    a = _as_binary(pred_masks, "predicted")
    b = _as_binary(gt_masks, "ground-truth")
    if a.shape != b.shape:
        raise ShapeError(f"jaccard: shapes {a.shape} and {b.shape} differ")
    axes = tuple(range(1, a.ndim))
    inter = np.count_nonzero(a & b, axis=axes)
    union = np.count_nonzero(a | b, axis=axes)
    return np.where(union == 0, 1.0, inter / np.maximum(union, 1))


@dataclass
class EvalReport:
    jcs: list[float]
    mean_seconds: float
    failures: list[str] = field(default_factory=list)
    label: str = ""
    items: list[str] = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.jcs)

    @property
    def mean_jcs(self) -> float:
        return float(np.mean(self.jcs)) if self.jcs else math.nan

    @property
    def std_jcs(self) -> float:
        # population standard deviation over per-image scores
        return float(np.std(self.jcs)) if self.jcs else math.nan

    def to_text(self) -> str:
        lines = [
            f"# timing protocol: {TIMING_PROTOCOL}",
            f"# jcs: per-image Jaccard of binarized (>= 0.5) prediction vs ground truth; std is population std",
            f"model: {self.label}",
            f"images: {self.count}",
            f"mean_jcs: {self.mean_jcs:.6f}",
            f"std_jcs: {self.std_jcs:.6f}",
            f"mean_inference_seconds: {self.mean_seconds:.6f}",
        ]
        lines += [f"failed: {f}" for f in self.failures]
        return "\n".join(lines) + "\n"

    CSV_HEADER = "model,images,mean_jcs,std_jcs,mean_seconds,failures"

    def csv_row(self) -> str:
        return (f"{self.label},{self.count},{self.mean_jcs:.6f},{self.std_jcs:.6f},"
                f"{self.mean_seconds:.6f},{len(self.failures)}")


@contextlib.contextmanager
def single_thread():
    with threadpool_limits(limits=1):
        yield


def timed_predict(model, images: np.ndarray, warmup: int = 5):
    """Predict ``[N,1,H,W]`` images one at a time; returns ``(probs, seconds per image)``."""
    preds, secs = [], []
    with single_thread():
        if len(images):
            for _ in range(warmup):
                model.predict(images[:1])
        for i in range(len(images)):
            t0 = time.perf_counter()
            p = model.predict(images[i : i + 1])
            secs.append(time.perf_counter() - t0)
            preds.append(p[0])
    probs = np.stack(preds) if preds else np.zeros((0,) + images.shape[1:])
    return probs, secs


def evaluate(model, images: np.ndarray, masks: np.ndarray, warmup: int = 5, threshold: float = 0.5,
             label: str = "", failures=()) -> EvalReport:
    """Score ``model`` (anything with ``predict([1,1,H,W]) -> probs``) on a test set."""
    probs, secs = timed_predict(model, images, warmup)
    scores = jaccard_per_image(binarize(probs, threshold), masks >= 0.5) if len(images) else []
    return EvalReport([float(s) for s in scores], float(np.mean(secs)) if secs else math.nan,
                      list(failures), label)


def evaluate_manifest(model, manifest, input_size: int, warmup: int = 5, threshold: float = 0.5,
                      label: str = "") -> EvalReport:
    """Like :func:`evaluate`, reading pairs from a manifest; unreadable items are reported and skipped."""
    from .scenegen.dataset import prepare_image, prepare_mask, read_image, read_mask

    images, masks, items, failures = [], [], [], []
    for img_path, msk_path in manifest.paths():
        try:
            img = prepare_image(read_image(img_path), input_size)
            msk = prepare_mask(read_mask(msk_path), input_size)
        except Exception as exc:  # noqa: BLE001 - keep evaluating remaining items
            failures.append(f"{img_path}: {exc}")
            continue
        images.append(img)
        masks.append(msk)
        items.append(str(img_path))
    shape = (0, 1, input_size, input_size)
    imgs = np.stack(images)[:, None] if images else np.zeros(shape, np.float32)
    msks = np.stack(masks)[:, None] if masks else np.zeros(shape, np.float32)
    report = evaluate(model, imgs, msks, warmup, threshold, label, failures)
    report.items = items
    return report


def bench(models: dict, sizes, n_images: int = 3, warmup: int = 5, seed: int = 0) -> list[dict]:
    """Time each ``label -> model`` on identical synthetic scenes at every size."""
    from .scenegen.dataset import generate_scenes

    rows = []
    for size in sizes:
        scenes = generate_scenes("boundary", n_images, size, seed)
        imgs = np.stack([s.image.astype(np.float32) / 255.0 for s in scenes])[:, None]
        for label, model in models.items():
            _, secs = timed_predict(model, imgs, warmup)
            rows.append({"model": label, "size": size, "images": n_images, "mean_seconds": float(np.mean(secs))})
    return rows


def format_bench(rows) -> str:
    sizes = sorted({r["size"] for r in rows})
    labels = list(dict.fromkeys(r["model"] for r in rows))
    table = {(r["model"], r["size"]): r["mean_seconds"] for r in rows}
    head = "Models".ljust(14) + "".join(f"{s}px (seconds)".rjust(18) for s in sizes)
    out = [f"# {TIMING_PROTOCOL}", head]
    for lab in labels:
        out.append(lab.ljust(14) + "".join(f"{table[(lab, s)]:.4f}".rjust(18) for s in sizes))
    if len(labels) == 2:
        a, b = labels
        out.append(("reduction").ljust(14) + "".join(
            f"{100 * (1 - table[(a, s)] / table[(b, s)]):.2f}%".rjust(18) for s in sizes))
    return "\n".join(out) + "\n"
