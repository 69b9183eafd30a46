"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"SNAP"  u32 version
    u32 len, utf-8 model kind
    u32 n, u32 dims[n]                      model construction dims
    u32 n_tensors
      per tensor: u32 ndim, u32 shape[ndim] shape table
    f32 payload                             all tensors, row-major, in table order
    u8 dist tag (0 gaussian, 1 uniform, 2 laplace)
    u32 D, f64 sigma[D], f64 p_noise, u8 frozen
    u8 basis tag (0 identity, 1 inline) [, f64 basis[D*D] row-major]
    u32 epoch, u64 seed
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import models
from .errors import FormatError
from .noise import DISTRIBUTIONS, NoiseSpec, SnapNet

MAGIC = b"SNAP"
VERSION = 1


@dataclass
class Checkpoint:
    net: SnapNet
    epoch: int
    seed: int


def to_bytes(net: SnapNet, epoch=0, seed=0) -> bytes:
    base = net.base
    out = bytearray(MAGIC)
    out += struct.pack("<I", VERSION)
    kind = base.kind.encode("utf-8")
    out += struct.pack("<I", len(kind)) + kind
    out += struct.pack(f"<I{len(base.dims)}I", len(base.dims), *base.dims)
    params = base.parameters()
    out += struct.pack("<I", len(params))
    for p in params:
        out += struct.pack(f"<I{p.value.ndim}I", p.value.ndim, *p.value.shape)
    for p in params:
        out += np.ascontiguousarray(p.value, dtype="<f4").tobytes()
    ns = net.noise
    out += struct.pack("<BI", DISTRIBUTIONS.index(ns.dist), ns.dim)
    out += np.ascontiguousarray(ns.sigma, dtype="<f8").tobytes()
    out += struct.pack("<dB", ns.p_noise, int(ns.frozen))
    if ns.basis is None:
        out += struct.pack("<B", 0)
    else:
        out += struct.pack("<B", 1) + np.ascontiguousarray(ns.basis, dtype="<f8").tobytes()
    out += struct.pack("<IQ", int(epoch), int(seed))
    return bytes(out)


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def unpack(self, fmt):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.buf):
            raise FormatError("truncated checkpoint", offset=self.pos)
        vals = struct.unpack_from(fmt, self.buf, self.pos)
        self.pos += size
        return vals

    def array(self, dtype, count):
        size = np.dtype(dtype).itemsize * count
        if self.pos + size > len(self.buf):
            raise FormatError("truncated checkpoint payload", offset=self.pos)
        arr = np.frombuffer(self.buf, dtype=dtype, count=count, offset=self.pos).copy()
        self.pos += size
        return arr


def from_bytes(buf: bytes) -> Checkpoint:
    if buf[:4] != MAGIC:
        raise FormatError("not a SNAP checkpoint (bad magic)", offset=0)
    r = _Reader(buf)
    r.pos = 4
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", offset=4)
    (klen,) = r.unpack("<I")
    kind = bytes(r.array(np.uint8, klen)).decode("utf-8")
    (ndims,) = r.unpack("<I")
    dims = r.unpack(f"<{ndims}I")
    (ntensors,) = r.unpack("<I")
    shapes = []
    for _ in range(ntensors):
        (nd,) = r.unpack("<I")
        shapes.append(r.unpack(f"<{nd}I"))
    arrays = [r.array("<f4", int(np.prod(s))).reshape(s).astype(np.float32) for s in shapes]
    at = r.pos
    tag, dim = r.unpack("<BI")
    if tag >= len(DISTRIBUTIONS):
        raise FormatError(f"unknown noise distribution tag {tag}", offset=at)
    sigma = r.array("<f8", dim)
    p_noise, frozen = r.unpack("<dB")
    at = r.pos
    (btag,) = r.unpack("<B")
    if btag not in (0, 1):
        raise FormatError(f"unknown basis tag {btag}", offset=at)
    basis = r.array("<f8", dim * dim).reshape(dim, dim) if btag == 1 else None
    epoch, seed = r.unpack("<IQ")
    if r.pos != len(buf):
        raise FormatError("trailing bytes after checkpoint", offset=r.pos)
    if kind == "mlp":
        base = models.init("mlp", dims, 0)
    elif kind == "cnn":
        base = models.init("cnn", dims, 0)
    else:
        raise FormatError(f"unknown model kind {kind!r}", offset=8)
    base.set_weights(arrays)
    noise = NoiseSpec(DISTRIBUTIONS[tag], sigma, p_noise, basis, bool(frozen))
    return Checkpoint(SnapNet(base, noise), int(epoch), int(seed))


def save_checkpoint(path, net: SnapNet, epoch=0, seed=0):
    Path(path).write_bytes(to_bytes(net, epoch, seed))


def load_checkpoint(path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())
