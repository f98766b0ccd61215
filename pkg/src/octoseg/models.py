"""OctHU-PageScan and the vanilla U-Net baseline.

Both networks share one builder: four encoder stages (double 3x3 octave conv
+ ReLU + 2x2 max-pool), a double-conv bottleneck, four decoder stages
(nearest x2 upsample, 2x2 up-conv halving channels, skip concatenation,
double 3x3 octave conv) and a 1x1 head with ``alpha_out = 0`` and a sigmoid.
OctHU uses ``alpha = 0.5`` in every hidden layer with base width 16; the
U-Net baseline is the same graph with ``alpha = 0`` and base width 64.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .octave import (
    OctConv2d,
    OctConvSpec,
    OctFeature,
    oct_concat,
    oct_maxpool,
    oct_relu,
    oct_sigmoid,
    oct_upsample,
    octconv_macs,
    octconv_params,
)
from .tensor import Tensor

DEPTH = 4
KINDS = ("octhu", "unet")


@dataclass(frozen=True)
class ArchSpec:
    kind: str = "octhu"
    scale: int = 16
    input_size: int = 512
    alpha: float = 0.5
    kernel: int = 3
    upconv_kernel: int = 2
    head_kernel: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        if self.scale < 2 or self.scale & (self.scale - 1):
            raise ConfigError(f"scale must be a power of two >= 2, got {self.scale}")
        if self.input_size < 32 or self.input_size % 32:
            raise ConfigError(f"input size must be a positive multiple of 32, got {self.input_size}")
        if not 0.0 <= self.alpha < 1.0:
            raise ConfigError(f"hidden alpha must lie in [0, 1), got {self.alpha}")

    @property
    def widths(self) -> list[int]:
        return [self.scale << i for i in range(DEPTH + 1)]

    def descriptor(self) -> dict[str, str]:
        return {
            "kind": self.kind,
            "scale": str(self.scale),
            "input_size": str(self.input_size),
            "alpha": repr(self.alpha),
            "kernel": str(self.kernel),
            "upconv_kernel": str(self.upconv_kernel),
            "head_kernel": str(self.head_kernel),
        }

    @classmethod
    def from_descriptor(cls, d: dict[str, str]) -> "ArchSpec":
        try:
            return cls(
                kind=d["kind"],
                scale=int(d["scale"]),
                input_size=int(d["input_size"]),
                alpha=float(d["alpha"]),
                kernel=int(d["kernel"]),
                upconv_kernel=int(d["upconv_kernel"]),
                head_kernel=int(d["head_kernel"]),
            )
        except KeyError as exc:
            raise ConfigError(f"architecture descriptor lacks {exc}") from None


@dataclass(frozen=True)
class LayerSpec:
    name: str
    op: str  # octconv | maxpool | upsample | concat
    inputs: tuple[str, ...]
    level: int  # resolution level: 1 is full input size
    channels: int
    conv: OctConvSpec | None = None
    activation: str | None = None
    alpha: float = 0.0

    def out_shape(self, input_size: int) -> tuple[int, int, int]:
        side = input_size >> (self.level - 1)
        return self.channels, side, side


def _layers(arch: ArchSpec) -> list[LayerSpec]:
    a, w = arch.alpha, arch.widths
    layers: list[LayerSpec] = []

    def conv(name, src, level, c_in, c_out, k, a_in, a_out, act):
        spec = OctConvSpec(c_in, c_out, k, a_in, a_out)
        layers.append(LayerSpec(name, "octconv", (src,), level, c_out, spec, act, a_out))
        return name

    prev, c_prev, skips = "input", 1, {}
    for lvl in range(1, DEPTH + 2):
        c = w[lvl - 1]
        prev = conv(f"oct_conv_{lvl}a", prev, lvl, c_prev, c, arch.kernel, 0.0 if lvl == 1 else a, a, "relu")
        prev = conv(f"oct_conv_{lvl}b", prev, lvl, c, c, arch.kernel, a, a, "relu")
        c_prev = c
        if lvl <= DEPTH:
            skips[lvl] = prev
            layers.append(LayerSpec(f"max_pool_{lvl}", "maxpool", (prev,), lvl + 1, c, alpha=a))
            prev = f"max_pool_{lvl}"
    for j in range(1, DEPTH + 1):
        lvl = DEPTH + 1 - j
        c = w[lvl - 1]
        layers.append(LayerSpec(f"upsize_{j}", "upsample", (prev,), lvl, c_prev, alpha=a))
        up = conv(f"up_conv_{j}", f"upsize_{j}", lvl, c_prev, c, arch.upconv_kernel, a, a, "relu")
        layers.append(LayerSpec(f"concatenate_{j}", "concat", (up, skips[lvl]), lvl, 2 * c, alpha=a))
        prev = conv(f"oct_conv_{5 + j}a", f"concatenate_{j}", lvl, 2 * c, c, arch.kernel, a, a, "relu")
        prev = conv(f"oct_conv_{5 + j}b", prev, lvl, c, c, arch.kernel, a, a, "relu")
        c_prev = c
    conv("oct_conv_10", prev, 1, c_prev, 1, arch.head_kernel, a, 0.0, "sigmoid")
    return layers


INPUT_EPS = 1e-6


def standardize_input(x: Tensor) -> Tensor:
    """Per-image zero mean, unit variance. Images are data, so no gradient flows back to them."""
    d = x.data
    mu = d.mean(axis=(-2, -1), keepdims=True)
    sd = d.std(axis=(-2, -1), keepdims=True)
    return Tensor((d - mu) / (sd + INPUT_EPS))


class ModelGraph:
    """Wired encoder/decoder; the layer list is fixed, parameter values are mutable."""

    def __init__(self, arch: ArchSpec, seed: int = 0, dtype=np.float32):
        self.arch = arch
        self.dtype = np.dtype(dtype)
        self.metadata: dict[str, str] = {}
        self.layers = _layers(arch)
        rng = np.random.default_rng(seed)
        self.convs: dict[str, OctConv2d] = {}
        for layer in self.layers:
            if layer.op == "octconv":
                init = "xavier" if layer.activation == "sigmoid" else "he"
                self.convs[layer.name] = OctConv2d(layer.conv, rng, self.dtype, init, layer.name)

    @property
    def kind(self) -> str:
        return self.arch.kind

    def parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, conv in self.convs.items():
            for key, t in conv.weights.items():
                out[f"{name}.{key}"] = t
        return out

    def skip_wiring(self) -> dict[str, tuple[str, str]]:
        """``concatenate_j -> (decoder input, encoder skip)`` names."""
        return {l.name: l.inputs for l in self.layers if l.op == "concat"}

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim not in (3, 4) or x.shape[-3] != 1:
            raise ShapeError(f"model expects [N,1,H,W] or [1,H,W] input, got {x.shape}")
        h, w = x.shape[-2:]
        if h % 32 or w % 32:
            raise ShapeError(f"input spatial dims must be multiples of 32, got {h}x{w}")
        values: dict[str, OctFeature] = {"input": OctFeature.from_tensor(standardize_input(x))}
        consumers: dict[str, int] = {}
        for layer in self.layers:
            for src in layer.inputs:
                consumers[src] = consumers.get(src, 0) + 1
        for layer in self.layers:
            args = [values[s] for s in layer.inputs]
            if layer.op == "octconv":
                y = self.convs[layer.name](args[0])
                y = oct_sigmoid(y) if layer.activation == "sigmoid" else oct_relu(y)
            elif layer.op == "maxpool":
                y = oct_maxpool(args[0])
            elif layer.op == "upsample":
                y = oct_upsample(args[0])
            else:
                y = oct_concat(args[0], args[1])
            values[layer.name] = y
            for src in layer.inputs:
                consumers[src] -= 1
                if consumers[src] == 0:
                    del values[src]
        return values[self.layers[-1].name].high

    __call__ = forward

    def predict(self, images: np.ndarray) -> np.ndarray:
        """Sigmoid map for ``[N,1,H,W]``, ``[1,H,W]`` or ``[H,W]`` arrays without recording a tape."""
        arr = np.asarray(images, dtype=self.dtype)
        squeeze = arr.ndim == 2
        if squeeze:
            arr = arr[None]
        with T.no_grad():
            out = self.forward(Tensor(arr)).data
        return out[0] if squeeze else out

    def trace_shapes(self, input_size: int | None = None) -> list[tuple[str, tuple[int, int, int]]]:
        size = input_size or self.arch.input_size
        return [(l.name, l.out_shape(size)) for l in self.layers]

    def layer_table(self, input_size: int | None = None) -> list[dict]:
        size = input_size or self.arch.input_size
        rows = []
        for l in self.layers:
            row = {"name": l.name, "op": l.op, "shape": l.out_shape(size), "alpha": l.alpha,
                   "params": 0, "macs": 0}
            if l.conv is not None:
                side = size >> (l.level - 1)
                row["params"] = octconv_params(l.conv)
                row["macs"] = octconv_macs(l.conv, side, side)
            rows.append(row)
        return rows


def build_model(arch: ArchSpec, seed: int = 0, dtype=np.float32) -> ModelGraph:
    return ModelGraph(arch, seed=seed, dtype=dtype)


def build_octhu(scale: int = 16, input_size: int = 512, seed: int = 0, dtype=np.float32, alpha: float = 0.5) -> ModelGraph:
    return build_model(ArchSpec("octhu", scale, input_size, alpha), seed, dtype)


def build_unet_baseline(scale: int = 64, input_size: int = 512, seed: int = 0, dtype=np.float32) -> ModelGraph:
    return build_model(ArchSpec("unet", scale, input_size, 0.0), seed, dtype)


def plain_clone_arch(arch: ArchSpec) -> ArchSpec:
    """Same widths and kernels with every convolution made ordinary (alpha 0)."""
    return replace(arch, alpha=0.0)


def model_params(m: ModelGraph | ArchSpec) -> int:
    layers = _layers(m) if isinstance(m, ArchSpec) else m.layers
    return sum(octconv_params(l.conv) for l in layers if l.conv is not None)


def model_macs(m: ModelGraph | ArchSpec, input_size: int | None = None) -> int:
    arch = m if isinstance(m, ArchSpec) else m.arch
    size = input_size or arch.input_size
    if size % 32:
        raise ConfigError(f"input size must be a multiple of 32, got {size}")
    total = 0
    for l in _layers(arch):
        if l.conv is not None:
            side = size >> (l.level - 1)
            total += octconv_macs(l.conv, side, side)
    return total


def parse_model_ref(ref: str, input_size: int = 512) -> ArchSpec:
    """Parse ``"octhu:16"`` / ``"unet:64"`` style references."""
    kind, _, scale = ref.partition(":")
    if kind not in KINDS:
        raise ConfigError(f"unknown model kind in {ref!r}")
    default = 16 if kind == "octhu" else 64
    try:
        s = int(scale) if scale else default
    except ValueError:
        raise ConfigError(f"bad scale in model reference {ref!r}") from None
    return ArchSpec(kind, s, input_size, 0.5 if kind == "octhu" else 0.0)
