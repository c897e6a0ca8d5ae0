"""Scaled-sign compression with error feedback.

A vector is reduced to one sign bit per coordinate plus a single scale,
the mean absolute value. On the wire that is an 8-byte little-endian
dimension, the scale as a 4-byte float, then ceil(d/8) sign bytes with
coordinate i at byte i//8 bit i%8 (bit set means positive). The scale is
kept at 64 bits in memory; only serialization narrows it.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ParseError, ShapeError

_HEADER_BYTES = 8 + 4


@dataclass(frozen=True)
class CompressedTensor:
    """Sign bits (bool array, True for nonnegative) and the l1/d scale."""

    signs: np.ndarray
    scale: float

    @property
    def dim(self) -> int:
        return self.signs.size


def compress(vec: np.ndarray) -> CompressedTensor:
    """Scaled sign: sign(0) counts as positive, scale = mean |coordinate|."""
    vec = np.asarray(vec, dtype=float)
    if vec.ndim != 1 or vec.size == 0:
        raise ShapeError("compress expects a non-empty 1-D vector")
    return CompressedTensor(vec >= 0.0, float(np.abs(vec).mean()))


def decompress(ct: CompressedTensor) -> np.ndarray:
    """Expand to +-scale per coordinate."""
    return np.where(ct.signs, ct.scale, -ct.scale)


def ef_step(grad: np.ndarray, err: np.ndarray) -> tuple[CompressedTensor, np.ndarray]:
    """Compress grad + err and return the residual as the next error buffer."""
    if grad.shape != err.shape:
        raise ShapeError("gradient and error buffer shapes differ")
    p = grad + err
    ct = compress(p)
    return ct, p - decompress(ct)


def wire_size_bytes(dim: int) -> int:
    """Serialized size: ceil(d/8) sign bytes plus the 12-byte header."""
    if dim < 1:
        raise ShapeError("dimension must be positive")
    return (dim + 7) // 8 + _HEADER_BYTES


def encode(ct: CompressedTensor) -> bytes:
    """Wire format: u64 dim, f32 scale, packed sign bits (LSB first)."""
    header = struct.pack("<Qf", ct.dim, ct.scale)
    return header + np.packbits(ct.signs, bitorder="little").tobytes()


def decode(blob: bytes) -> CompressedTensor:
    """Inverse of encode; the scale comes back with float32 precision."""
    if len(blob) < _HEADER_BYTES:
        raise ParseError("compressed blob shorter than its header")
    dim, scale = struct.unpack_from("<Qf", blob)
    expected = wire_size_bytes(dim) if dim >= 1 else _HEADER_BYTES
    if dim < 1 or len(blob) != expected:
        raise ParseError(f"blob length {len(blob)} inconsistent with dimension {dim}")
    bits = np.unpackbits(
        np.frombuffer(blob, dtype=np.uint8, offset=_HEADER_BYTES),
        count=dim, bitorder="little",
    )
    return CompressedTensor(bits.astype(bool), float(scale))
