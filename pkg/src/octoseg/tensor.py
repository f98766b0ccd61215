"""Minimal reverse-mode autodiff over numpy arrays.

Layout is channels-first (``[C, H, W]`` or ``[N, C, H, W]``), row-major. Every
operation returns a new :class:`Tensor`; when any input requires a gradient the
result records its parents and a closure mapping the upstream gradient to one
gradient per parent. :func:`backward` replays those closures in reverse
topological order.

Only leaf tensors (parameters and inputs created by the user) keep ``.grad``
between calls, and they accumulate into it. Intermediate gradients live in a
dictionary for the duration of one backward pass, so calling ``backward`` twice
without :func:`zero_grads` exactly doubles leaf gradients.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, NumericError, ShapeError

DEFAULT_DTYPE = np.float64

# im2col is used while the unfolded patch matrix stays below this many scalars;
# larger convolutions fall back to shifted accumulation (k*k small matmuls).
IM2COL_LIMIT = 1 << 23

_grad_enabled = True
_mac_counters: list[list[int]] = []
_conv_strategy: str | None = None


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if arr.dtype.kind != "f":
            arr = arr.astype(DEFAULT_DTYPE if dtype is None else dtype)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"expected a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def is_leaf(self) -> bool:
        return self._backward is None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self._op}{tag})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def sum(self):
        return tensor_sum(self)

    def mean(self):
        return tensor_mean(self)

    def backward(self):
        backward(self)


def as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


def parameter(data, name: str | None = None, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=True, dtype=dtype, name=name)


@contextlib.contextmanager
def no_grad():
    """Disable tape recording (inference and evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


@contextlib.contextmanager
def count_macs():
    """Count convolution multiply-accumulates executed inside the block.

    Yields a one-element list whose entry holds the running total.
    """
    counter = [0]
    _mac_counters.append(counter)
    try:
        yield counter
    finally:
        _mac_counters.remove(counter)


@contextlib.contextmanager
def conv_strategy(name: str | None):
    """Force ``"im2col"`` or ``"shifted"`` convolution kernels (tests only)."""
    global _conv_strategy
    if name not in (None, "im2col", "shifted"):
        raise ValueError(f"unknown conv strategy {name!r}")
    prev = _conv_strategy
    _conv_strategy = name
    try:
        yield
    finally:
        _conv_strategy = prev


def _result(data: np.ndarray, parents: Sequence[Tensor], grad_fn: Callable, op: str) -> Tensor:
    if not np.isfinite(data).all():
        raise NumericError(f"non-finite values produced by {op}")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._op = op
    out.requires_grad = False
    out._parents = ()
    out._backward = None
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = grad_fn
    return out


# ---------------------------------------------------------------------------
# graph traversal


def topological_order(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root``, each after all of its parents."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor that requires grad")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topological_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.grad is None:
                node.grad = np.array(g, dtype=node.data.dtype, copy=True)
            else:
                node.grad += g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def zero_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None


# ---------------------------------------------------------------------------
# elementwise and reductions


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "add")
    return _result(a.data + b.data, (a, b), lambda g: (g, g), "add")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _result(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def tensor_sum(x: Tensor) -> Tensor:
    shape = x.shape
    return _result(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shape),), "sum")


def tensor_mean(x: Tensor) -> Tensor:
    shape, n = x.shape, x.data.size
    return _result(
        np.asarray(x.data.mean()), (x,), lambda g: (np.broadcast_to(g / n, shape),), "mean"
    )


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _result(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,), "relu")


def sigmoid(x: Tensor) -> Tensor:
    s = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _result(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != b.ndim or a.shape[:-3] != b.shape[:-3] or a.shape[-2:] != b.shape[-2:]:
        raise ShapeError(f"concat_channels: incompatible shapes {a.shape} and {b.shape}")
    ca = a.shape[-3]

    def grad_fn(g):
        return g[..., :ca, :, :], g[..., ca:, :, :]

    return _result(np.concatenate([a.data, b.data], axis=-3), (a, b), grad_fn, "concat")


# ---------------------------------------------------------------------------
# 2x2 pooling and nearest upsampling (operate on the last two axes)


def _check_even(x: Tensor, op: str) -> None:
    if x.ndim < 2 or x.shape[-1] % 2 or x.shape[-2] % 2:
        raise ShapeError(f"{op}: spatial dims must be even, got {x.shape}")


def _windows(a: np.ndarray) -> np.ndarray:
    *lead, h, w = a.shape
    return a.reshape(*lead, h // 2, 2, w // 2, 2)


def maxpool2(x: Tensor) -> Tensor:
    _check_even(x, "maxpool2")
    *lead, h, w = x.shape
    win = np.swapaxes(_windows(x.data), -3, -2).reshape(*lead, h // 2, w // 2, 4)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def grad_fn(g):
        gw = np.zeros(win.shape, dtype=g.dtype)
        np.put_along_axis(gw, idx[..., None], g[..., None], axis=-1)
        gw = gw.reshape(*lead, h // 2, w // 2, 2, 2)
        return (np.swapaxes(gw, -3, -2).reshape(*lead, h, w),)

    return _result(out, (x,), grad_fn, "maxpool2")


def avgpool2(x: Tensor) -> Tensor:
    _check_even(x, "avgpool2")
    shape = x.shape
    out = _windows(x.data).sum(axis=(-3, -1)) * 0.25

    def grad_fn(g):
        return (_upsample(g * 0.25).reshape(shape),)

    return _result(out.astype(x.dtype), (x,), grad_fn, "avgpool2")


def _upsample(a: np.ndarray) -> np.ndarray:
    *lead, h, w = a.shape
    return np.broadcast_to(a[..., :, None, :, None], (*lead, h, 2, w, 2)).reshape(*lead, 2 * h, 2 * w)


def upsample_nearest2(x: Tensor) -> Tensor:
    def grad_fn(g):
        return (_windows(g).sum(axis=(-3, -1)),)

    return _result(_upsample(x.data), (x,), grad_fn, "upsample2")


# ---------------------------------------------------------------------------
# convolution (cross-correlation)


def same_padding(k: int) -> tuple[int, int]:
    lo = (k - 1) // 2
    return lo, k - 1 - lo


def _conv_geometry(x_shape, w_shape, stride: int, padding: str):
    n, c, h, wd = x_shape
    o, cw, kh, kw = w_shape
    if kh != kw or kh < 1:
        raise ShapeError(f"conv2d: kernel must be square and >= 1, got {w_shape}")
    if c != cw:
        raise ShapeError(
            f"conv2d: input has {c} channels but weights expect {cw} (weights {w_shape})"
        )
    if stride < 1:
        raise ShapeError(f"conv2d: stride must be >= 1, got {stride}")
    if padding == "same":
        p0, p1 = same_padding(kh)
    elif padding == "valid":
        p0 = p1 = 0
        if h < kh or wd < kh:
            raise ShapeError(f"conv2d: input {h}x{wd} smaller than kernel {kh} with valid padding")
    else:
        raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")
    ho = (h + p0 + p1 - kh) // stride + 1
    wo = (wd + p0 + p1 - kh) // stride + 1
    return n, c, h, wd, o, kh, p0, p1, ho, wo


def _pad(x: np.ndarray, p0: int, p1: int) -> np.ndarray:
    if p0 == 0 and p1 == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p0, p1), (p0, p1)))


def _use_im2col(n, c, k, ho, wo) -> bool:
    if _conv_strategy is not None:
        return _conv_strategy == "im2col"
    return n * c * k * k * ho * wo <= IM2COL_LIMIT


def _window(i, j, s, ho, wo):
    return (slice(None), slice(None), slice(i, i + s * (ho - 1) + 1, s), slice(j, j + s * (wo - 1) + 1, s))


def _im2col(xp, k, s, ho, wo):
    n, c = xp.shape[:2]
    cols = np.empty((n, c, k, k, ho, wo), dtype=xp.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[_window(i, j, s, ho, wo)]
    return cols.reshape(n, c * k * k, ho * wo)


def _conv_forward(x, w, b, stride, padding, keep_cols=False):
    n, c, h, wd, o, k, p0, p1, ho, wo = _conv_geometry(x.shape, w.shape, stride, padding)
    xp = _pad(x, p0, p1)
    cols = None
    if _use_im2col(n, c, k, ho, wo):
        cols = _im2col(xp, k, stride, ho, wo)
        out = np.matmul(w.reshape(o, -1), cols).reshape(n, o, ho, wo)
    else:
        acc = None
        for i in range(k):
            for j in range(k):
                xs = xp[_window(i, j, stride, ho, wo)]
                term = np.tensordot(w[:, :, i, j], xs, axes=([1], [1]))  # o, n, ho, wo
                if acc is None:
                    acc = term
                else:
                    acc += term
        out = acc.transpose(1, 0, 2, 3)
    if b is not None:
        out = out + b.reshape(1, o, 1, 1)
    for counter in _mac_counters:
        counter[0] += n * o * c * k * k * ho * wo
    out = np.ascontiguousarray(out, dtype=x.dtype)
    return (out, cols) if keep_cols else out


def conv2d_backward(x, w, grad_out, stride: int = 1, padding: str = "same", cols=None):
    """Gradients of a conv2d output w.r.t. input, weights and bias.

    Takes raw arrays in ``[N, C, H, W]`` layout and returns ``(dx, dw, db)``.
    ``cols`` optionally reuses the patch matrix saved by the forward pass.
    """
    if grad_out is None:
        raise ContractError("conv2d_backward called without an upstream gradient")
    n, c, h, wd, o, k, p0, p1, ho, wo = _conv_geometry(x.shape, w.shape, stride, padding)
    if grad_out.shape != (n, o, ho, wo):
        raise ShapeError(f"conv2d_backward: upstream grad {grad_out.shape} != {(n, o, ho, wo)}")
    s = stride
    dxp = np.zeros((n, c, h + p0 + p1, wd + p0 + p1), dtype=x.dtype)
    db = grad_out.sum(axis=(0, 2, 3))
    if cols is not None or _use_im2col(n, c, k, ho, wo):
        if cols is None:
            cols = _im2col(_pad(x, p0, p1), k, s, ho, wo)
        g3 = grad_out.reshape(n, o, ho * wo)
        dw = np.zeros((o, c * k * k), dtype=w.dtype)
        for b in range(n):
            dw += g3[b] @ cols[b].T
        dw = dw.reshape(w.shape)
        dcols = np.matmul(w.reshape(o, -1).T, g3).reshape(n, c, k, k, ho, wo)
        for i in range(k):
            for j in range(k):
                dxp[_window(i, j, s, ho, wo)] += dcols[:, :, i, j]
    else:
        xp = _pad(x, p0, p1)
        dw = np.empty(w.shape, dtype=w.dtype)
        for i in range(k):
            for j in range(k):
                sl = _window(i, j, s, ho, wo)
                dw[:, :, i, j] = np.tensordot(grad_out, xp[sl], axes=([0, 2, 3], [0, 2, 3]))
                dxp[sl] += np.tensordot(w[:, :, i, j], grad_out, axes=([0], [1])).transpose(1, 0, 2, 3)
    dx = dxp[:, :, p0 : p0 + h, p0 : p0 + wd]
    return np.ascontiguousarray(dx), dw.astype(w.dtype, copy=False), db.astype(w.dtype, copy=False)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: str = "same") -> Tensor:
    """2-D cross-correlation of ``[C,H,W]`` or ``[N,C,H,W]`` input with ``[O,C,k,k]`` weights."""
    squeeze = x.ndim == 3
    if x.ndim not in (3, 4) or weight.ndim != 4:
        raise ShapeError(f"conv2d: expected 3-D/4-D input and 4-D weights, got {x.shape}, {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(f"conv2d: bias shape {bias.shape} does not match {weight.shape[0]} outputs")
    xd = x.data[None] if squeeze else x.data
    keep = _grad_enabled and (x.requires_grad or weight.requires_grad)
    out, cols = _conv_forward(xd, weight.data, None if bias is None else bias.data, stride, padding, keep_cols=True)
    if not keep:
        cols = None
    if squeeze:
        out = out[0]

    def grad_fn(g):
        g4 = g[None] if squeeze else g
        dx, dw, db = conv2d_backward(xd, weight.data, g4, stride, padding, cols)
        return (dx[0] if squeeze else dx), dw, db

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(out, parents, grad_fn, "conv2d")
