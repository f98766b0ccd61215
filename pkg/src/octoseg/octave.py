"""Octave convolution over (high, low) frequency feature pairs.

A feature with ``C`` channels and split ``alpha`` keeps ``round(alpha * C)``
channels at half resolution (the low branch) and the rest at full resolution.
An octave convolution has four weight partitions::

    high_out = conv(high, W_hh) + up(conv(low, W_lh))
    low_out  = conv(pool(high), W_hl) + conv(low, W_ll)

where ``pool`` is 2x2 average pooling and ``up`` is nearest-neighbour x2.
The partitions tile the full ``c_out x c_in`` channel product, so the weight
count is independent of alpha while the low-resolution paths cost a quarter
of the multiply-accumulates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .tensor import Tensor


def split_channels(channels: int, alpha: float) -> tuple[int, int]:
    """Return ``(high, low)`` channel counts; ``low = round(alpha * channels)``, halves up."""
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must lie in [0, 1], got {alpha}")
    low = int(math.floor(alpha * channels + 0.5))
    return channels - low, low


@dataclass(frozen=True)
class OctConvSpec:
    c_in: int
    c_out: int
    k: int = 3
    alpha_in: float = 0.5
    alpha_out: float = 0.5

    def __post_init__(self):
        if self.c_in < 1 or self.c_out < 1 or self.k < 1:
            raise ConfigError(f"invalid octave conv geometry {self}")
        split_channels(self.c_in, self.alpha_in)
        split_channels(self.c_out, self.alpha_out)

    @property
    def in_split(self) -> tuple[int, int]:
        return split_channels(self.c_in, self.alpha_in)

    @property
    def out_split(self) -> tuple[int, int]:
        return split_channels(self.c_out, self.alpha_out)

    def partitions(self) -> dict[str, tuple[int, int]]:
        """Non-empty weight partitions as ``name -> (c_out_path, c_in_path)``."""
        (ih, il), (oh, ol) = self.in_split, self.out_split
        paths = {"hh": (oh, ih), "hl": (ol, ih), "lh": (oh, il), "ll": (ol, il)}
        return {name: shape for name, shape in paths.items() if shape[0] and shape[1]}

    @property
    def is_plain(self) -> bool:
        return self.in_split[1] == 0 and self.out_split[1] == 0


@dataclass
class OctFeature:
    """High/low frequency pair; ``low`` lives at exactly half the resolution of ``high``."""

    high: Tensor | None
    low: Tensor | None
    alpha: float

    def __post_init__(self):
        if self.high is None and self.low is None:
            raise ConfigError("an octave feature needs at least one branch")
        if (self.alpha == 0.0) != (self.low is None):
            raise ConfigError(f"alpha={self.alpha} inconsistent with low branch presence")
        if (self.alpha == 1.0) != (self.high is None):
            raise ConfigError(f"alpha={self.alpha} inconsistent with high branch presence")
        if self.high is not None and self.low is not None:
            hh, hw = self.high.shape[-2:]
            if hh % 2 or hw % 2 or self.low.shape[-2:] != (hh // 2, hw // 2):
                raise ShapeError(
                    f"low branch {self.low.shape} is not half of high branch {self.high.shape}"
                )

    @classmethod
    def from_tensor(cls, x: Tensor) -> "OctFeature":
        return cls(x, None, 0.0)

    @property
    def channels(self) -> int:
        return sum(t.shape[-3] for t in (self.high, self.low) if t is not None)

    @property
    def spatial(self) -> tuple[int, int]:
        """Full-resolution (high branch) spatial dims."""
        if self.high is not None:
            return tuple(self.high.shape[-2:])
        h, w = self.low.shape[-2:]
        return 2 * h, 2 * w

    def shape(self) -> tuple[int, int, int]:
        return (self.channels, *self.spatial)

    def tensors(self):
        return [t for t in (self.high, self.low) if t is not None]


def _add_opt(a: Tensor | None, b: Tensor | None) -> Tensor | None:
    if a is None:
        return b
    if b is None:
        return a
    return T.add(a, b)


def octconv_forward(x: OctFeature, spec: OctConvSpec, weights: dict[str, Tensor]) -> OctFeature:
    """Apply one octave convolution (stride 1, same padding).

    ``weights`` maps ``w_hh, w_hl, w_lh, w_ll, b_h, b_l`` to tensors; absent
    partitions (zero channels on either side) are simply omitted.
    """
    if not math.isclose(x.alpha, spec.alpha_in):
        raise ConfigError(f"input alpha {x.alpha} does not match layer alpha_in {spec.alpha_in}")
    (ih, il), (oh, ol) = spec.in_split, spec.out_split
    got_h = 0 if x.high is None else x.high.shape[-3]
    got_l = 0 if x.low is None else x.low.shape[-3]
    if (got_h, got_l) != (ih, il):
        raise ShapeError(f"input channels (high={got_h}, low={got_l}) != layer split {(ih, il)}")
    if ol and x.high is not None and (x.high.shape[-1] % 2 or x.high.shape[-2] % 2):
        raise ShapeError(f"high branch {x.high.shape} must have even dims to feed a low output")

    high = low = None
    if oh:
        if ih:
            high = T.conv2d(x.high, weights["w_hh"], weights["b_h"])
        if il:
            from_low = T.upsample_nearest2(T.conv2d(x.low, weights["w_lh"], None if ih else weights["b_h"]))
            high = _add_opt(high, from_low)
    if ol:
        if ih:
            low = T.conv2d(T.avgpool2(x.high), weights["w_hl"], weights["b_l"])
        if il:
            low = _add_opt(low, T.conv2d(x.low, weights["w_ll"], None if ih else weights["b_l"]))
    return OctFeature(high, low, spec.alpha_out)


def octconv_params(spec: OctConvSpec) -> int:
    return spec.k * spec.k * spec.c_in * spec.c_out + spec.c_out


def octconv_macs(spec: OctConvSpec, input_h: int, input_w: int) -> int:
    """Multiply-accumulates for one image; ``input_h x input_w`` is the high-branch resolution."""
    kk = spec.k * spec.k
    full = input_h * input_w
    half = (input_h // 2) * (input_w // 2)
    total = 0
    for name, (co, ci) in spec.partitions().items():
        total += kk * co * ci * (full if name == "hh" else half)
    return total


class OctConv2d:
    """Octave convolution layer holding its own parameter tensors."""

    def __init__(self, spec: OctConvSpec, rng: np.random.Generator, dtype=np.float64, init: str = "he", name: str = ""):
        self.spec = spec
        self.name = name
        fan_in = spec.k * spec.k * spec.c_in
        if init == "he":
            std = math.sqrt(2.0 / fan_in)
        elif init == "xavier":
            std = math.sqrt(2.0 / (fan_in + spec.k * spec.k * spec.c_out))
        else:
            raise ConfigError(f"unknown init {init!r}")
        k = spec.k
        self.weights: dict[str, Tensor] = {}
        for path, (co, ci) in spec.partitions().items():
            w = rng.standard_normal((co, ci, k, k)) * std
            self.weights[f"w_{path}"] = T.parameter(w.astype(dtype), name=f"{name}.w_{path}")
        oh, ol = spec.out_split
        if oh:
            self.weights["b_h"] = T.parameter(np.zeros(oh, dtype=dtype), name=f"{name}.b_h")
        if ol:
            self.weights["b_l"] = T.parameter(np.zeros(ol, dtype=dtype), name=f"{name}.b_l")

    def __call__(self, x: OctFeature) -> OctFeature:
        return octconv_forward(x, self.spec, self.weights)

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.weights)

    def num_params(self) -> int:
        return sum(t.size for t in self.weights.values())


def _map(x: OctFeature, fn) -> OctFeature:
    return OctFeature(
        None if x.high is None else fn(x.high),
        None if x.low is None else fn(x.low),
        x.alpha,
    )


def oct_relu(x: OctFeature) -> OctFeature:
    return _map(x, T.relu)


def oct_sigmoid(x: OctFeature) -> OctFeature:
    return _map(x, T.sigmoid)


def oct_maxpool(x: OctFeature) -> OctFeature:
    return _map(x, T.maxpool2)


def oct_upsample(x: OctFeature) -> OctFeature:
    return _map(x, T.upsample_nearest2)


def oct_concat(a: OctFeature, b: OctFeature) -> OctFeature:
    """Concatenate high-with-high and low-with-low; the result's alpha is recomputed."""
    if (a.high is None) != (b.high is None) or (a.low is None) != (b.low is None):
        raise ConfigError("oct_concat: branch presence differs between operands")
    high = None if a.high is None else T.concat_channels(a.high, b.high)
    low = None if a.low is None else T.concat_channels(a.low, b.low)
    c_low = 0 if low is None else low.shape[-3]
    c_all = c_low + (0 if high is None else high.shape[-3])
    return OctFeature(high, low, c_low / c_all)
