import io
import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tgquant.errors import IoError, ParseError, UnsupportedFormat
from tgquant.tensor_io import (
    decode_npy,
    encode_npy,
    ravel_index,
    read_npy,
    row_major_strides,
    unravel_offset,
    write_npy,
)


def test_zero_tensor_from_numpy_file(tmp_path):
    path = tmp_path / "z.npy"
    np.save(path, np.zeros((2, 3), dtype=np.float32))
    t = read_npy(path)
    assert t.shape == (2, 3)
    assert t.dtype == np.float32
    assert (t == 0).all()


def test_scalar_payload_is_little_endian_f32(tmp_path):
    path = tmp_path / "a.npy"
    write_npy(np.array([42.0], dtype=np.float32), path)
    raw = path.read_bytes()
    assert raw[:8] == b"\x93NUMPY\x01\x00"
    (hlen,) = struct.unpack("<H", raw[8:10])
    assert (10 + hlen) % 64 == 0
    assert raw[10 + hlen - 1 : 10 + hlen] == b"\n"
    assert raw[10 + hlen :] == struct.pack("<f", 42.0)


def test_round_trip_random_and_numpy_interop(tmp_path):
    rng = np.random.default_rng(0)
    x = rng.standard_normal(1000).astype(np.float32)
    path = tmp_path / "r.npy"
    write_npy(x, path)
    assert read_npy(path).tobytes() == x.tobytes()
    np.testing.assert_array_equal(np.load(path), x)


def test_nan_payload_round_trips_bit_exact():
    bits = np.array([0x7FC00001, 0xFFC12345, 0x7F800000, 0x3F800000], dtype=np.uint32)
    x = bits.view(np.float32).reshape(2, 2)
    assert decode_npy(encode_npy(x)).view(np.uint32).tobytes() == bits.tobytes()


def test_uint8_mask_round_trip():
    m = (np.arange(12).reshape(3, 4) % 2).astype(np.uint8)
    back = decode_npy(encode_npy(m))
    assert back.dtype == np.uint8
    np.testing.assert_array_equal(back, m)


def test_file_object_io():
    buf = io.BytesIO()
    write_npy(np.ones((2, 2), dtype=np.float32), buf)
    buf.seek(0)
    assert read_npy(buf).sum() == 4.0


def test_fortran_order_rejected(tmp_path):
    path = tmp_path / "f.npy"
    np.save(path, np.asfortranarray(np.ones((2, 3), dtype=np.float32)))
    with pytest.raises(UnsupportedFormat):
        read_npy(path)


@pytest.mark.parametrize("dtype", [np.float64, np.int32, ">f4"])
def test_other_dtypes_rejected(tmp_path, dtype):
    path = tmp_path / "d.npy"
    np.save(path, np.ones(3, dtype=dtype))
    with pytest.raises(UnsupportedFormat):
        read_npy(path)


def test_version_2_rejected():
    raw = bytearray(encode_npy(np.ones(2, dtype=np.float32)))
    raw[6] = 2
    with pytest.raises(UnsupportedFormat):
        decode_npy(bytes(raw))


def test_malformed_header():
    with pytest.raises(ParseError):
        decode_npy(b"NOTNPY" + b"\x01\x00" + b"\x00\x00")
    bad = b"{'descr': '<f4', 'fortran_order': False}"
    raw = b"\x93NUMPY\x01\x00" + struct.pack("<H", len(bad)) + bad
    with pytest.raises(ParseError):
        decode_npy(raw)


def test_truncated_payload():
    raw = encode_npy(np.ones((4, 4), dtype=np.float32))
    with pytest.raises(IoError):
        decode_npy(raw[:-3])


def test_unwritable_path(tmp_path):
    with pytest.raises(IoError):
        write_npy(np.ones(1, dtype=np.float32), tmp_path / "missing" / "x.npy")


def test_missing_file(tmp_path):
    with pytest.raises(IoError):
        read_npy(tmp_path / "nope.npy")


def test_strides():
    assert row_major_strides((2, 3, 4)) == (12, 4, 1)
    assert row_major_strides((5,)) == (1,)


@given(st.lists(st.integers(1, 5), min_size=1, max_size=4), st.data())
def test_flatten_unflatten_identity(shape, data):
    size = int(np.prod(shape))
    offset = data.draw(st.integers(0, size - 1))
    index = unravel_offset(offset, shape)
    assert ravel_index(index, shape) == offset
    assert index == tuple(int(i) for i in np.unravel_index(offset, shape))
