"""Binary checkpoint format.

Layout (all integers unsigned little-endian 64-bit)::

    b"OCTHU1"
    header_len, header       UTF-8 "key=value" lines, keys sorted
    per tensor, in model parameter order:
        name_len, name       UTF-8
        dtype tag            2 ASCII bytes, "f4" or "f8"
        rank, dims[rank]
        payload              raw little-endian scalars, row-major

Header keys: ``format_version``, ``tensors``, ``arch.*`` (architecture
descriptor, see :meth:`ArchSpec.descriptor`) and ``meta.*`` (free-form
training metadata such as epoch, seed and config hash).
"""

from __future__ import annotations

import io
import os
import struct

import numpy as np

from .errors import (
    CheckpointError,
    DescriptorMismatchError,
    TruncatedCheckpointError,
    VersionMismatchError,
)
from .models import ArchSpec, ModelGraph, build_model

MAGIC = b"OCTHU1"
FORMAT_VERSION = 1
_U64 = struct.Struct("<Q")
_TAGS = {np.dtype("float32"): b"f4", np.dtype("float64"): b"f8"}
_DTYPES = {v: k for k, v in _TAGS.items()}


def _header(model: ModelGraph, metadata: dict | None) -> bytes:
    fields = {"format_version": str(FORMAT_VERSION), "tensors": str(len(model.parameters()))}
    fields.update({f"arch.{k}": v for k, v in model.arch.descriptor().items()})
    for k, v in (metadata or {}).items():
        v = str(v)
        if "\n" in v or "=" in k or "\n" in k:
            raise ValueError(f"metadata entry {k!r} contains a newline or '='")
        fields[f"meta.{k}"] = v
    return "".join(f"{k}={fields[k]}\n" for k in sorted(fields)).encode("utf-8")


def checkpoint_bytes(model: ModelGraph, metadata: dict | None = None) -> bytes:
    buf = io.BytesIO()
    write_checkpoint(model, buf, metadata)
    return buf.getvalue()


def write_checkpoint(model: ModelGraph, fh, metadata: dict | None = None) -> int:
    header = _header(model, metadata)
    written = fh.write(MAGIC) + fh.write(_U64.pack(len(header))) + fh.write(header)
    for name, t in model.parameters().items():
        arr = t.data
        tag = _TAGS[arr.dtype]
        raw = name.encode("utf-8")
        written += fh.write(_U64.pack(len(raw))) + fh.write(raw) + fh.write(tag)
        written += fh.write(_U64.pack(arr.ndim))
        for d in arr.shape:
            written += fh.write(_U64.pack(d))
        written += fh.write(np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes())
    return written


def save_checkpoint(model: ModelGraph, path, metadata: dict | None = None) -> int:
    """Write ``model`` to ``path`` atomically; returns the file size in bytes."""
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        n = write_checkpoint(model, fh, metadata)
    os.replace(tmp, path)
    return n


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedCheckpointError(
                f"checkpoint truncated: needed {n} bytes at offset {self.pos}, file has {len(self.data)}"
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u64(self) -> int:
        return _U64.unpack(self.take(8))[0]


def read_checkpoint(data: bytes) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    """Parse raw checkpoint bytes into ``(header, tensors)``."""
    r = _Reader(data)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError("not an OCTHU checkpoint (bad magic bytes)")
    try:
        text = r.take(r.u64()).decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CheckpointError(f"checkpoint header is not UTF-8: {exc}") from None
    header = {}
    for line in text.splitlines():
        key, sep, value = line.partition("=")
        if not sep:
            raise CheckpointError(f"malformed header line {line!r}")
        header[key] = value
    version = header.get("format_version")
    if version != str(FORMAT_VERSION):
        raise VersionMismatchError(f"checkpoint format version {version!r}, expected {FORMAT_VERSION}")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(int(header.get("tensors", "0"))):
        name = r.take(r.u64()).decode("utf-8")
        tag = r.take(2)
        if tag not in _DTYPES:
            raise CheckpointError(f"tensor {name!r}: unknown dtype tag {tag!r}")
        dtype = _DTYPES[tag]
        dims = tuple(r.u64() for _ in range(r.u64()))
        count = int(np.prod(dims, dtype=np.int64))
        payload = r.take(count * dtype.itemsize)
        tensors[name] = np.frombuffer(payload, dtype=dtype.newbyteorder("<")).astype(dtype).reshape(dims)
    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} trailing bytes after last tensor")
    return header, tensors


def load_checkpoint(path, kind: str | None = None, arch: ArchSpec | None = None) -> ModelGraph:
    """Rebuild a model from ``path``.

    ``kind`` or ``arch`` name the builder the caller expects; a checkpoint
    written by a different architecture raises :class:`DescriptorMismatchError`.
    The returned model carries a ``metadata`` dict.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    header, tensors = read_checkpoint(data)
    desc = {k[5:]: v for k, v in header.items() if k.startswith("arch.")}
    stored = ArchSpec.from_descriptor(desc)
    if kind is not None and stored.kind != kind:
        raise DescriptorMismatchError(f"checkpoint holds a {stored.kind!r} model, expected {kind!r}")
    if arch is not None and arch != stored:
        raise DescriptorMismatchError(f"checkpoint architecture {stored} != requested {arch}")
    dtypes = {t.dtype for t in tensors.values()}
    if len(dtypes) > 1:
        raise CheckpointError(f"mixed tensor dtypes {dtypes}")
    model = build_model(stored, dtype=dtypes.pop() if dtypes else np.float32)
    params = model.parameters()
    if list(params) != list(tensors):
        raise DescriptorMismatchError("tensor names do not match the architecture descriptor")
    for name, t in params.items():
        if t.shape != tensors[name].shape:
            raise DescriptorMismatchError(f"{name}: stored shape {tensors[name].shape} != {t.shape}")
        t.data = tensors[name]
    model.metadata = {k[5:]: v for k, v in header.items() if k.startswith("meta.")}
    return model
