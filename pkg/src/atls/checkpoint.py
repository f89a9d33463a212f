"""Binary model checkpoints.

Layout (all integers little-endian)::

    b"ATLS" | version u16 | layer count u32 | input_dim u32 (0 = unset)
    per layer: type tag u8, then the layer record

Linear records hold ``rows u32, cols u32, has_bias u8`` followed by the
row-major float32 weights and, if present, the float32 bias. Analog linear
layers are stored by their current weights and load back as digital layers.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from .network import (
    Activation,
    AttentionBlock,
    DigitalLinear,
    MeanPool,
    ModelGraph,
    Patchify,
    SoftmaxHead,
    _LinearBase,
)

__all__ = ["MAGIC", "VERSION", "CheckpointError", "dumps", "loads", "save_checkpoint", "load_checkpoint"]

MAGIC = b"ATLS"
VERSION = 1

TAG_LINEAR, TAG_ACTIVATION, TAG_PATCHIFY, TAG_MEANPOOL, TAG_ATTENTION, TAG_HEAD = range(1, 7)


class CheckpointError(ValueError):
    pass


def _f32(a) -> bytes:
    a = np.asarray(a)
    if not np.all(np.abs(a) <= np.finfo(np.float32).max):
        raise CheckpointError("weights are not finite in float32")
    return np.ascontiguousarray(a, dtype="<f4").tobytes()


def _write_linear(out, layer: _LinearBase):
    rows, cols = layer.shape
    has_bias = layer.bias is not None
    out.write(struct.pack("<IIB", rows, cols, has_bias))
    out.write(_f32(np.asarray(layer.weight)))
    if has_bias:
        out.write(_f32(layer.bias))


def _write_layer(out, layer):
    if isinstance(layer, SoftmaxHead):
        out.write(struct.pack("<B", TAG_HEAD))
        _write_linear(out, layer.linear)
    elif isinstance(layer, _LinearBase):
        out.write(struct.pack("<B", TAG_LINEAR))
        _write_linear(out, layer)
    elif isinstance(layer, Activation):
        out.write(struct.pack("<BB", TAG_ACTIVATION, Activation.KINDS.index(layer.kind)))
    elif isinstance(layer, Patchify):
        out.write(struct.pack("<BII", TAG_PATCHIFY, layer.n_patches, layer.patch_dim))
    elif isinstance(layer, MeanPool):
        out.write(struct.pack("<B", TAG_MEANPOOL))
    elif isinstance(layer, AttentionBlock):
        out.write(struct.pack("<BI", TAG_ATTENTION, layer.heads))
        for lin in layer.linears():
            _write_linear(out, lin)
    else:
        raise CheckpointError(f"cannot serialise layer type {type(layer).__name__}")


def dumps(model: ModelGraph) -> bytes:
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<HII", VERSION, len(model.layers), model.input_dim or 0))
    for layer in model.layers:
        _write_layer(out, layer)
    return out.getvalue()


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def unpack(self, fmt):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.buf):
            raise CheckpointError("truncated checkpoint")
        vals = struct.unpack_from(fmt, self.buf, self.pos)
        self.pos += size
        return vals

    def floats(self, n):
        if self.pos + 4 * n > len(self.buf):
            raise CheckpointError("truncated checkpoint")
        a = np.frombuffer(self.buf, dtype="<f4", count=n, offset=self.pos)
        self.pos += 4 * n
        return a.astype(np.float64)


def _read_linear(r: _Reader) -> DigitalLinear:
    rows, cols, has_bias = r.unpack("<IIB")
    w = r.floats(rows * cols).reshape(rows, cols)
    b = r.floats(rows) if has_bias else None
    return DigitalLinear(w, b)


def loads(buf: bytes) -> ModelGraph:
    if buf[:4] != MAGIC:
        raise CheckpointError("bad magic; not an ATLS checkpoint")
    r = _Reader(buf)
    r.pos = 4
    version, n_layers, input_dim = r.unpack("<HII")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    layers = []
    for _ in range(n_layers):
        (tag,) = r.unpack("<B")
        if tag == TAG_LINEAR:
            layers.append(_read_linear(r))
        elif tag == TAG_HEAD:
            layers.append(SoftmaxHead(_read_linear(r)))
        elif tag == TAG_ACTIVATION:
            (kind,) = r.unpack("<B")
            if kind >= len(Activation.KINDS):
                raise CheckpointError(f"unknown activation code {kind}")
            layers.append(Activation(Activation.KINDS[kind]))
        elif tag == TAG_PATCHIFY:
            layers.append(Patchify(*r.unpack("<II")))
        elif tag == TAG_MEANPOOL:
            layers.append(MeanPool())
        elif tag == TAG_ATTENTION:
            (heads,) = r.unpack("<I")
            lins = [_read_linear(r) for _ in AttentionBlock.SUBLAYERS]
            layers.append(AttentionBlock(*lins, heads))
        else:
            raise CheckpointError(f"unknown layer tag {tag} at byte {r.pos - 1}")
    if r.pos != len(buf):
        raise CheckpointError(f"{len(buf) - r.pos} trailing bytes after last layer")
    return ModelGraph(layers, input_dim=input_dim or None)


def save_checkpoint(model: ModelGraph, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dumps(model))
    return path


def load_checkpoint(path) -> ModelGraph:
    return loads(Path(path).read_bytes())
