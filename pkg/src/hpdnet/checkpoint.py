"""Versioned binary checkpoints for the network weights and the head.

One file holds two consecutive little-endian blobs:

    HPDN blob: magic b"HPDN", version u32, layer count u32, then per layer
        m u32, n u32, m*n f64 real entries (row-major), m*n f64 imaginary
        entries, tau f64.
    CVHD blob: magic b"CVHD", version u32, conv stage count u32, then per
        stage M u32, R u32, K u32, pool flag u32, M*M*R*K f64 real weight
        entries (row-major), the imaginary entries, K f64 real bias, K f64
        imaginary bias; then dense rows u32, cols u32, rows*cols f64 weight
        entries, rows f64 bias entries.

Serialization is deterministic: identical parameters produce identical
bytes.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import BadMagic, TruncatedFile
from .head import ConvKernel, HeadParams
from .layers import BiMapWeight, HpdNetParams

NET_MAGIC = b"HPDN"
HEAD_MAGIC = b"CVHD"
VERSION = 1

_U32 = struct.Struct("<I")


def _f64(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


class _Reader:
    def __init__(self, blob: bytes, offset: int = 0):
        self.blob = blob
        self.off = offset

    def take(self, size: int) -> bytes:
        if self.off + size > len(self.blob):
            raise TruncatedFile(
                f"checkpoint ends at byte {len(self.blob)}, "
                f"needed {self.off + size}")
        out = self.blob[self.off:self.off + size]
        self.off += size
        return out

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]

    def f64s(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(count * 8), dtype="<f8").copy()


def serialize_params(params: HpdNetParams) -> bytes:
    parts = [NET_MAGIC, _U32.pack(VERSION), _U32.pack(params.depth)]
    for w, tau in params.layers:
        m, n = w.shape
        parts += [_U32.pack(m), _U32.pack(n),
                  _f64(w.w.real), _f64(w.w.imag),
                  struct.pack("<d", tau)]
    return b"".join(parts)


def serialize_head(head: HeadParams) -> bytes:
    parts = [HEAD_MAGIC, _U32.pack(VERSION), _U32.pack(len(head.convs))]
    for ker, pool in zip(head.convs, head.pool_after):
        m, _, r, k = ker.shape
        parts += [_U32.pack(m), _U32.pack(r), _U32.pack(k),
                  _U32.pack(1 if pool else 0),
                  _f64(ker.weights.real), _f64(ker.weights.imag),
                  _f64(ker.bias.real), _f64(ker.bias.imag)]
    rows, cols = head.dense_w.shape
    parts += [_U32.pack(rows), _U32.pack(cols),
              _f64(head.dense_w), _f64(head.dense_b)]
    return b"".join(parts)


def _read_params(r: _Reader) -> HpdNetParams:
    if r.take(4) != NET_MAGIC:
        raise BadMagic(f"expected {NET_MAGIC!r} blob")
    if r.u32() != VERSION:
        raise BadMagic("unsupported network checkpoint version")
    layers = []
    for _ in range(r.u32()):
        m = r.u32()
        n = r.u32()
        re = r.f64s(m * n).reshape(m, n)
        im = r.f64s(m * n).reshape(m, n)
        tau = struct.unpack("<d", r.take(8))[0]
        layers.append((BiMapWeight(re + 1j * im, validate=False), tau))
    return HpdNetParams(tuple(layers))


def _read_head(r: _Reader) -> HeadParams:
    if r.take(4) != HEAD_MAGIC:
        raise BadMagic(f"expected {HEAD_MAGIC!r} blob")
    if r.u32() != VERSION:
        raise BadMagic("unsupported head checkpoint version")
    convs, pools = [], []
    for _ in range(r.u32()):
        m = r.u32()
        rr = r.u32()
        k = r.u32()
        pools.append(bool(r.u32()))
        wre = r.f64s(m * m * rr * k).reshape(m, m, rr, k)
        wim = r.f64s(m * m * rr * k).reshape(m, m, rr, k)
        bre = r.f64s(k)
        bim = r.f64s(k)
        convs.append(ConvKernel(wre + 1j * wim, bre + 1j * bim))
    rows = r.u32()
    cols = r.u32()
    dense_w = r.f64s(rows * cols).reshape(rows, cols)
    dense_b = r.f64s(rows)
    return HeadParams(convs=tuple(convs), pool_after=tuple(pools),
                      dense_w=dense_w, dense_b=dense_b)


def save_checkpoint(path, params: HpdNetParams, head: HeadParams) -> None:
    Path(path).write_bytes(serialize_params(params) + serialize_head(head))


def load_checkpoint(path):
    blob = Path(path).read_bytes()
    r = _Reader(blob)
    params = _read_params(r)
    head = _read_head(r)
    return params, head
