"""Static symmetric per-output-channel weight quantization and INT4 packing.

Packed layout: rows are packed independently, two values per byte, even
column in the low nibble, odd column in the high nibble, two's-complement
nibbles, odd row lengths padded with a zero nibble. Bit widths 5..8 store
one two's-complement byte per value.

Container file (``.tgqw``), all little-endian::

    b"TGQW" | version u8 | rows u32 | cols u32 | bits u8 | scales f32[rows] | payload
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from .errors import CorruptPayload, IoError, NonFiniteInput, ParseError, RangeError, ShapeError, UnsupportedFormat
from .quant_core import signed_range

MAGIC = b"TGQW"
VERSION = 1
_HEADER = struct.Struct("<4sBIIB")

PathLike = Union[str, os.PathLike]


@dataclass(frozen=True)
class PackedWeights:
    rows: int
    cols: int
    packed: bytes
    scales: np.ndarray
    bits: int = 4

    def __post_init__(self):
        scales = np.asarray(self.scales, dtype=np.float32)
        if scales.shape != (self.rows,):
            raise ShapeError(f"expected {self.rows} scales, got shape {scales.shape}")
        if not (scales > 0).all():
            raise RangeError("weight scales must be positive")
        if len(self.packed) != packed_row_bytes(self.cols, self.bits) * self.rows:
            raise CorruptPayload(
                f"payload of {len(self.packed)} bytes does not match {self.rows}x{self.cols} at {self.bits} bits"
            )
        object.__setattr__(self, "scales", scales)


def packed_row_bytes(cols: int, bits: int) -> int:
    return (cols + 1) // 2 if bits <= 4 else cols


def quantize_weights(W: np.ndarray, bits: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """Absmax per-output-channel symmetric quantization.

    Returns ``(q, s)``: int8 codes of shape ``(O, I)`` and float32 scales
    ``s_o = max(absmax_o / q_max, 1e-8)``. Codes are computed as
    ``rint(W * q_max / absmax)`` so exact ties stay exact.
    """
    W = np.asarray(W)
    if W.ndim != 2:
        raise ShapeError(f"weights must be 2-D (out, in), got shape {W.shape}")
    if not np.isfinite(W).all():
        raise NonFiniteInput("weights contain NaN or Inf")
    q_min, q_max = signed_range(bits)
    W64 = W.astype(np.float64)
    absmax = np.abs(W64).max(axis=1)
    floored = absmax / q_max < 1e-8
    scales = np.where(floored, 1e-8, absmax / q_max).astype(np.float32)
    # on the floor, W * q_max / denom reduces to W / 1e-8
    denom = np.where(floored, q_max * 1e-8, absmax)
    q = np.clip(np.rint(W64 * q_max / denom[:, None]), q_min, q_max)
    return q.astype(np.int8), scales


def pack_int4(q: np.ndarray, scales: np.ndarray | None = None, bits: int = 4) -> PackedWeights:
    """Pack signed codes into bytes; ``scales`` defaults to ones."""
    q = np.asarray(q)
    if q.ndim != 2:
        raise ShapeError(f"codes must be 2-D, got shape {q.shape}")
    q_min, q_max = signed_range(bits)
    if q.size and (q.min() < q_min or q.max() > q_max):
        raise RangeError(f"codes outside [{q_min}, {q_max}]")
    rows, cols = q.shape
    if scales is None:
        scales = np.ones(rows, dtype=np.float32)
    codes = q.astype(np.int16)
    if bits <= 4:
        if cols % 2:
            codes = np.concatenate([codes, np.zeros((rows, 1), dtype=np.int16)], axis=1)
        nib = (codes & 0xF).astype(np.uint8)
        payload = (nib[:, 0::2] | (nib[:, 1::2] << 4)).astype(np.uint8)
    else:
        payload = (codes & 0xFF).astype(np.uint8)
    return PackedWeights(rows, cols, payload.tobytes(), scales, bits)


def unpack_int4(p: PackedWeights) -> np.ndarray:
    """Inverse of :func:`pack_int4`; returns int8 codes ``(rows, cols)``."""
    per_row = packed_row_bytes(p.cols, p.bits)
    raw = np.frombuffer(p.packed, dtype=np.uint8)
    if raw.size != per_row * p.rows:
        raise CorruptPayload(f"payload has {raw.size} bytes, expected {per_row * p.rows}")
    raw = raw.reshape(p.rows, per_row).astype(np.int16)
    if p.bits <= 4:
        lo, hi = raw & 0xF, raw >> 4
        nib = np.empty((p.rows, per_row * 2), dtype=np.int16)
        nib[:, 0::2], nib[:, 1::2] = lo, hi
        codes = np.where(nib >= 8, nib - 16, nib)[:, : p.cols]
    else:
        codes = np.where(raw >= 128, raw - 256, raw)
    return codes.astype(np.int8)


def dequantize_weights(p: PackedWeights) -> np.ndarray:
    """``W_hat[o, i] = s_o * q[o, i]`` in float32."""
    q = unpack_int4(p).astype(np.float64)
    return (p.scales.astype(np.float64)[:, None] * q).astype(np.float32)


def pack_weights(W: np.ndarray, bits: int = 4) -> PackedWeights:
    q, s = quantize_weights(W, bits)
    return pack_int4(q, s, bits)


def encode_tgqw(p: PackedWeights) -> bytes:
    return _HEADER.pack(MAGIC, VERSION, p.rows, p.cols, p.bits) + p.scales.astype("<f4").tobytes() + p.packed


def decode_tgqw(raw: bytes) -> PackedWeights:
    if len(raw) < _HEADER.size:
        raise ParseError("weight file shorter than its header")
    magic, version, rows, cols, bits = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ParseError(f"bad magic {magic!r}")
    if version != VERSION:
        raise UnsupportedFormat(f"weight file version {version} not supported")
    if not 2 <= bits <= 8:
        raise UnsupportedFormat(f"bit width {bits} not supported")
    off = _HEADER.size
    scales = np.frombuffer(raw, dtype="<f4", count=rows, offset=off) if len(raw) >= off + 4 * rows else None
    if scales is None:
        raise CorruptPayload("weight file truncated inside scales")
    payload = raw[off + 4 * rows :]
    return PackedWeights(rows, cols, bytes(payload), scales.astype(np.float32), bits)


def save_packed(p: PackedWeights, path: PathLike) -> None:
    try:
        Path(path).write_bytes(encode_tgqw(p))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def load_packed(path: PathLike) -> PackedWeights:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    return decode_tgqw(raw)
