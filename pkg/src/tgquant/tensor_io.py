"""Minimal NPY v1.0 reader/writer and row-major index helpers.

Tensors are plain numpy arrays. Only the little-endian ``<f4`` and ``|u1``
dtypes in C order are accepted; anything else is rejected rather than
converted.
"""

from __future__ import annotations

import ast
import os
import struct
from pathlib import Path
from typing import BinaryIO, Sequence, Union

import numpy as np

from .errors import IoError, NonFiniteInput, ParseError, UnsupportedFormat

MAGIC = b"\x93NUMPY"
ALIGN = 64
SUPPORTED_DTYPES = {"<f4": np.dtype("<f4"), "|u1": np.dtype("|u1")}

PathLike = Union[str, os.PathLike]


def row_major_strides(shape: Sequence[int]) -> tuple[int, ...]:
    """Element strides (not bytes) for a C-ordered array of ``shape``."""
    strides = []
    acc = 1
    for extent in reversed(shape):
        strides.append(acc)
        acc *= extent
    return tuple(reversed(strides))


def ravel_index(index: Sequence[int], shape: Sequence[int]) -> int:
    if len(index) != len(shape):
        raise ValueError(f"index rank {len(index)} != shape rank {len(shape)}")
    offset = 0
    for i, extent, stride in zip(index, shape, row_major_strides(shape)):
        if not 0 <= i < extent:
            raise IndexError(f"index {tuple(index)} out of bounds for {tuple(shape)}")
        offset += i * stride
    return offset


def unravel_offset(offset: int, shape: Sequence[int]) -> tuple[int, ...]:
    size = int(np.prod(shape, dtype=np.int64))
    if not 0 <= offset < size:
        raise IndexError(f"offset {offset} out of bounds for {tuple(shape)}")
    index = []
    for stride in row_major_strides(shape):
        i, offset = divmod(offset, stride)
        index.append(i)
    return tuple(index)


def _header_bytes(arr: np.ndarray) -> bytes:
    descr = "<f4" if arr.dtype == np.float32 else "|u1"
    shape = tuple(int(n) for n in arr.shape)
    header = f"{{'descr': '{descr}', 'fortran_order': False, 'shape': {shape!r}, }}"
    # magic(6) + version(2) + length(2) + header + '\n' is a multiple of ALIGN
    unpadded = len(MAGIC) + 2 + 2 + len(header) + 1
    header += " " * (-unpadded % ALIGN) + "\n"
    return MAGIC + b"\x01\x00" + struct.pack("<H", len(header)) + header.encode("latin1")


def encode_npy(arr: np.ndarray) -> bytes:
    """Serialize ``arr`` to NPY v1.0 bytes."""
    arr = np.asarray(arr)
    if arr.dtype not in (np.dtype("<f4"), np.dtype("|u1")):
        raise UnsupportedFormat(f"cannot write dtype {arr.dtype}; expected float32 or uint8")
    return _header_bytes(arr) + np.ascontiguousarray(arr).tobytes(order="C")


def write_npy(arr: np.ndarray, path: PathLike | BinaryIO) -> None:
    payload = encode_npy(arr)
    if hasattr(path, "write"):
        path.write(payload)
        return
    try:
        Path(path).write_bytes(payload)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _parse_header(text: str) -> tuple[str, bool, tuple[int, ...]]:
    try:
        header = ast.literal_eval(text)
    except (ValueError, SyntaxError) as exc:
        raise ParseError(f"malformed NPY header: {text!r}") from exc
    if not isinstance(header, dict) or set(header) != {"descr", "fortran_order", "shape"}:
        raise ParseError(f"NPY header must hold descr/fortran_order/shape: {text!r}")
    descr, fortran, shape = header["descr"], header["fortran_order"], header["shape"]
    if not isinstance(shape, tuple) or not all(isinstance(n, int) and n >= 0 for n in shape):
        raise ParseError(f"bad shape in NPY header: {shape!r}")
    if not isinstance(fortran, bool) or not isinstance(descr, str):
        raise ParseError(f"bad NPY header fields: {text!r}")
    return descr, fortran, shape


def decode_npy(raw: bytes) -> np.ndarray:
    """Parse NPY v1.0 bytes into a read-only array."""
    if len(raw) < 10 or raw[:6] != MAGIC:
        raise ParseError("missing NPY magic")
    major, minor = raw[6], raw[7]
    if (major, minor) != (1, 0):
        raise UnsupportedFormat(f"NPY version {major}.{minor} not supported")
    (hlen,) = struct.unpack("<H", raw[8:10])
    if len(raw) < 10 + hlen:
        raise ParseError("NPY header truncated")
    try:
        text = raw[10 : 10 + hlen].decode("latin1")
    except UnicodeDecodeError as exc:  # pragma: no cover - latin1 decodes any byte
        raise ParseError("NPY header is not text") from exc
    descr, fortran, shape = _parse_header(text)
    if descr not in SUPPORTED_DTYPES:
        raise UnsupportedFormat(f"dtype {descr!r} not supported")
    if fortran:
        raise UnsupportedFormat("fortran_order arrays not supported")
    dtype = SUPPORTED_DTYPES[descr]
    count = int(np.prod(shape, dtype=np.int64))
    body = raw[10 + hlen :]
    if len(body) < count * dtype.itemsize:
        raise IoError(f"NPY payload truncated: need {count * dtype.itemsize} bytes, got {len(body)}")
    arr = np.frombuffer(body, dtype=dtype, count=count).reshape(shape)
    return arr


def read_npy(path: PathLike | BinaryIO) -> np.ndarray:
    """Read a float32 or uint8 C-order array from an NPY v1.0 file.

    Raises:
        ParseError: bad magic or header.
        UnsupportedFormat: a dtype, layout or NPY version outside the supported subset.
        IoError: unreadable file or truncated payload.
    """
    if hasattr(path, "read"):
        raw = path.read()
    else:
        try:
            raw = Path(path).read_bytes()
        except OSError as exc:
            raise IoError(f"cannot read {path}: {exc}") from exc
    return decode_npy(raw)


def require_finite(arr: np.ndarray, what: str = "activations") -> None:
    if arr.dtype.kind == "f" and not np.isfinite(arr).all():
        raise NonFiniteInput(f"{what} contain NaN or Inf")
