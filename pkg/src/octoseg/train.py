"""Loss, optimizer and the training loop."""

from __future__ import annotations

import hashlib
import math
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import tensor as T
from .checkpoint import save_checkpoint
from .errors import ConfigError, NumericError, ShapeError, TrainingDiverged
from .evaluate import binarize, jaccard_per_image
from .models import ArchSpec, ModelGraph, build_model
from .tensor import Tensor

BCE_CLAMP = 1e-7
METRICS_HEADER = "epoch,train_loss,val_jcs,seconds"
AUGMENT_MODES = ("none", "dihedral")


def dihedral(a: np.ndarray, code: int) -> np.ndarray:
    """One of the eight flips/quarter-turns of the last two axes; exact, so masks stay binary."""
    if code & 4:
        a = a[..., ::-1]
    return np.rot90(a, k=code & 3, axes=(-2, -1))


def bce_loss(pred: Tensor, target) -> Tensor:
    """Mean pixelwise binary cross-entropy with predictions clamped to [1e-7, 1 - 1e-7]."""
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=pred.dtype)
    if t.shape != pred.shape:
        raise ShapeError(f"bce_loss: prediction {pred.shape} vs target {t.shape}")
    p = np.clip(pred.data, BCE_CLAMP, 1.0 - BCE_CLAMP)
    n = p.size
    value = -np.mean(t * np.log(p) + (1.0 - t) * np.log(1.0 - p))

    def grad_fn(g):
        return (g * (p - t) / (p * (1.0 - p)) / n,)

    return T._result(np.asarray(value, dtype=pred.dtype), (pred,), grad_fn, "bce")


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 4
    epochs: int = 40
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    input_size: int = 96
    model: str = "octhu"
    scale: int = 4
    train_manifest: str = ""
    val_manifest: str = ""
    checkpoint_every: int = 1
    dtype: str = "float32"
    augment: str = "dihedral"

    def validate(self) -> None:
        if not self.learning_rate >= 0 or not math.isfinite(self.learning_rate):
            raise ConfigError(f"learning_rate must be finite and >= 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.augment not in AUGMENT_MODES:
            raise ConfigError(f"augment must be one of {AUGMENT_MODES}, got {self.augment!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype}")
        self.arch()

    def arch(self) -> ArchSpec:
        alpha = 0.5 if self.model == "octhu" else 0.0
        return ArchSpec(self.model, self.scale, self.input_size, alpha)

    def as_strings(self) -> dict[str, str]:
        return {k: repr(v) if isinstance(v, float) else str(v) for k, v in sorted(asdict(self).items())}

    def config_hash(self) -> str:
        text = "\n".join(f"{k}={v}" for k, v in self.as_strings().items())
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    @classmethod
    def from_strings(cls, d: dict[str, str]) -> "TrainConfig":
        kw = {}
        for f in fields(cls):
            if f.name in d:
                kw[f.name] = type(f.default)(d[f.name])
        return cls(**kw)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray | None], state: dict,
              lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update, in place on ``params`` and ``state``.

    ``state`` holds ``t`` and per-parameter first/second moments ``m``/``v``;
    a missing gradient counts as zero.
    """
    for name, g in grads.items():
        if g is not None and not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for {name} at step {state.get('t', 0) + 1}")
    state["t"] = t = state.get("t", 0) + 1
    m_all = state.setdefault("m", {})
    v_all = state.setdefault("v", {})
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        m = m_all.get(name)
        v = v_all.get(name)
        if m is None:
            m = m_all[name] = np.zeros_like(p)
            v = v_all[name] = np.zeros_like(p)
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype, copy=False)


class Adam:
    def __init__(self, params: dict[str, Tensor], lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state: dict = {"t": 0}

    def step(self) -> None:
        adam_step({k: p.data for k, p in self.params.items()},
                  {k: p.grad for k, p in self.params.items()},
                  self.state, self.lr, self.beta1, self.beta2, self.eps)

    def zero_grad(self) -> None:
        T.zero_grads(self.params.values())


def child_seed(seed: int, tag: str) -> int:
    """Stable 32-bit seed derived from ``(seed, tag)``."""
    return int.from_bytes(hashlib.sha256(f"{seed}:{tag}".encode()).digest()[:4], "little")


def predict_batches(model: ModelGraph, images: np.ndarray, batch_size: int = 8) -> np.ndarray:
    out = [model.predict(images[i : i + batch_size]) for i in range(0, len(images), batch_size)]
    return np.concatenate(out) if out else np.zeros_like(images)


def mean_jcs(model: ModelGraph, images: np.ndarray, masks: np.ndarray) -> float:
    if len(images) == 0:
        return math.nan
    probs = predict_batches(model, images)
    return float(np.mean(jaccard_per_image(binarize(probs), masks >= 0.5)))


@dataclass
class TrainResult:
    model: ModelGraph
    best_model_path: Path | None
    last_model_path: Path | None
    history: list[dict]
    best_val_jcs: float


def train(config: TrainConfig, train_set, val_set=None, out_dir=None, log=None) -> TrainResult:
    """Train from scratch.

    ``train_set``/``val_set`` are ``(images, masks)`` arrays shaped ``[N,1,S,S]``.
    With ``out_dir`` set, writes ``metrics.csv`` (one row per epoch), ``best.ckpt``
    (highest validation JCS, initial weights until an epoch improves on them)
    and ``last.ckpt``. Everything except the ``seconds`` column is a pure
    function of the config and data.
    """
    config.validate()
    images, masks = (np.asarray(a, dtype=config.dtype) for a in train_set)
    if len(images) == 0:
        raise ConfigError("training set is empty")
    if images.shape != masks.shape or images.shape[1:] != (1, config.input_size, config.input_size):
        raise ShapeError(f"training arrays {images.shape}/{masks.shape} do not match input size {config.input_size}")
    if val_set is not None:
        val_images, val_masks = (np.asarray(a, dtype=config.dtype) for a in val_set)
    else:
        val_images = val_masks = None

    model = build_model(config.arch(), seed=child_seed(config.seed, "init"), dtype=config.dtype)
    params = model.parameters()
    opt = Adam(params, config.learning_rate, config.beta1, config.beta2, config.eps)
    out = Path(out_dir) if out_dir is not None else None
    best_path = last_path = None
    meta = {f"train.{k}": v for k, v in config.as_strings().items()}
    meta.update(seed=str(config.seed), config_hash=config.config_hash())

    history: list[dict] = []
    best = -math.inf
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        best_path, last_path = out / "best.ckpt", out / "last.ckpt"
        (out / "metrics.csv").write_text(METRICS_HEADER + "\n", encoding="utf-8")
        save_checkpoint(model, best_path, {**meta, "epoch": "0"})
        save_checkpoint(model, last_path, {**meta, "epoch": "0"})

    n = len(images)
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        order = np.random.default_rng([child_seed(config.seed, "shuffle"), epoch]).permutation(n)
        aug_rng = np.random.default_rng([child_seed(config.seed, "augment"), epoch])
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            xb, yb = images[idx], masks[idx]
            if config.augment == "dihedral":
                codes = aug_rng.integers(0, 8, size=len(idx))
                xb = np.stack([dihedral(x, c) for x, c in zip(xb, codes)])
                yb = np.stack([dihedral(y, c) for y, c in zip(yb, codes)])
            try:
                pred = model(Tensor(np.ascontiguousarray(xb)))
                loss = bce_loss(pred, np.ascontiguousarray(yb))
                T.backward(loss)
                opt.step()
            except NumericError as exc:
                where = f" (last good checkpoint: {last_path})" if last_path else ""
                raise TrainingDiverged(f"epoch {epoch}, batch starting at {start}: {exc}{where}") from exc
            opt.zero_grad()
            total += float(loss.data) * len(idx)
        train_loss = total / n
        val = mean_jcs(model, val_images, val_masks) if val_images is not None else math.nan
        secs = time.perf_counter() - t0
        row = {"epoch": epoch, "train_loss": train_loss, "val_jcs": val, "seconds": secs}
        history.append(row)
        if log is not None:
            log(f"epoch {epoch:4d}  loss {train_loss:.6f}  val_jcs {val:.4f}  ({secs:.1f}s)")
        if out is not None:
            with open(out / "metrics.csv", "a", encoding="utf-8") as fh:
                fh.write(f"{epoch},{train_loss:.10f},{val:.10f},{secs:.3f}\n")
            epoch_meta = {**meta, "epoch": str(epoch)}
            if not math.isnan(val) and val > best:
                save_checkpoint(model, best_path, epoch_meta)
            if epoch % config.checkpoint_every == 0 or epoch == config.epochs:
                save_checkpoint(model, last_path, epoch_meta)
        if not math.isnan(val) and val > best:
            best = val
    return TrainResult(model, best_path, last_path, history, best)
