import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from tgquant.errors import CorruptPayload, NonFiniteInput, ParseError, RangeError, ShapeError
from tgquant.weight_quant import (
    PackedWeights,
    decode_tgqw,
    dequantize_weights,
    encode_tgqw,
    load_packed,
    pack_int4,
    pack_weights,
    quantize_weights,
    save_packed,
    unpack_int4,
)


def test_tie_rounds_to_even():
    q, s = quantize_weights(np.array([[0.7, -0.35]]))
    assert s[0] == np.float32(0.1)
    assert q.tolist() == [[7, -4]]


def test_zero_row_floor_scale():
    q, s = quantize_weights(np.zeros((1, 5)))
    assert s[0] == np.float32(1e-8)
    assert (q == 0).all()


def test_unit_spike_row():
    q, s = quantize_weights(np.array([[1.0, 0.0, 0.0, 0.0]]))
    assert s[0] == np.float32(1 / 7)
    assert q.tolist() == [[7, 0, 0, 0]]


def test_nonfinite_weights():
    with pytest.raises(NonFiniteInput):
        quantize_weights(np.array([[1.0, np.nan]]))
    with pytest.raises(ShapeError):
        quantize_weights(np.ones(3))


def test_nibble_layout():
    p = pack_int4(np.array([[-8, 7]]))
    assert p.packed == bytes([0x78])
    p = pack_int4(np.array([[3]]))
    assert p.packed == bytes([0x03])
    assert unpack_int4(p).tolist() == [[3]]


def test_all_byte_patterns_round_trip():
    pairs = list(itertools.product(range(-8, 8), repeat=2))
    q = np.array(pairs, dtype=np.int8).reshape(1, -1)
    p = pack_int4(q)
    assert len(p.packed) == 256
    assert sorted(p.packed) == list(range(256))
    for (lo, hi), byte in zip(pairs, p.packed):
        assert byte == oracles.nibble_byte(lo, hi)
    assert unpack_int4(p).tolist() == q.tolist()


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 9), st.integers(1, 33), st.integers(2, 8), st.integers(0, 2**32 - 1))
def test_random_codes_round_trip(rows, cols, bits, seed):
    lo, hi = -(2 ** (bits - 1)), 2 ** (bits - 1) - 1
    q = np.random.default_rng(seed).integers(lo, hi + 1, size=(rows, cols)).astype(np.int8)
    p = pack_int4(q, bits=bits)
    assert unpack_int4(p).tolist() == q.tolist()
    back = decode_tgqw(encode_tgqw(p))
    assert (back.rows, back.cols, back.bits, back.packed) == (p.rows, p.cols, p.bits, p.packed)
    assert unpack_int4(back).tolist() == q.tolist()


def test_out_of_range_codes():
    with pytest.raises(RangeError):
        pack_int4(np.array([[8]]))
    with pytest.raises(RangeError):
        pack_int4(np.array([[-9]]))


def test_corrupt_payload_length():
    with pytest.raises(CorruptPayload):
        PackedWeights(2, 3, b"\x00" * 3, np.ones(2, dtype=np.float32))
    raw = encode_tgqw(pack_weights(np.ones((2, 4))))
    with pytest.raises(CorruptPayload):
        decode_tgqw(raw[:-1])
    with pytest.raises(ParseError):
        decode_tgqw(b"XXXX" + raw[4:])


def test_container_round_trip(tmp_path):
    W = np.random.default_rng(0).normal(size=(5, 7)).astype(np.float32)
    p = pack_weights(W)
    save_packed(p, tmp_path / "w.tgqw")
    back = load_packed(tmp_path / "w.tgqw")
    assert (back.rows, back.cols, back.bits, back.packed) == (5, 7, 4, p.packed)
    assert back.scales.tobytes() == p.scales.tobytes()
    assert dequantize_weights(back).tobytes() == dequantize_weights(p).tobytes()


finite_w = st.floats(-1e3, 1e3, allow_nan=False, width=32)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float32, st.tuples(st.integers(1, 6), st.integers(1, 20)), elements=finite_w), st.integers(2, 8))
def test_error_bound_and_idempotence(W, bits):
    p = pack_weights(W, bits)
    W_hat = dequantize_weights(p)
    err = np.abs(W_hat.astype(np.float64) - W.astype(np.float64))
    bound = np.array(oracles.weight_error_bound(W.astype(np.float64).tolist(), p.scales.astype(np.float64).tolist(), bits))
    assert (err <= bound).all()
    again = dequantize_weights(pack_weights(W_hat, bits))
    np.testing.assert_allclose(again, W_hat, rtol=1e-6, atol=0)
    np.testing.assert_allclose(W_hat, np.array(oracles.weight_qdq(W.astype(np.float64).tolist(), bits)), rtol=1e-6, atol=1e-12)


def test_tie_at_seven_bits_respects_bound():
    W = np.array([[1.0, 2.0]], dtype=np.float32)
    p = pack_weights(W, 7)
    assert unpack_int4(p).tolist() == [[32, 63]]  # 31.5 rounds to even
    err = np.abs(dequantize_weights(p).astype(np.float64) - W)
    bound = np.array(oracles.weight_error_bound(W.astype(np.float64).tolist(), p.scales.astype(np.float64).tolist(), 7))
    assert (err <= bound).all()


def test_eight_bit_byte_layout():
    q = np.array([[-128, 127, -1]])
    p = pack_int4(q, bits=8)
    assert p.packed == bytes([0x80, 0x7F, 0xFF])
    assert unpack_int4(p).tolist() == q.tolist()


def test_tiny_row_on_scale_floor():
    q, s = quantize_weights(np.array([[1e-17, 3e-8, -5e-8]]))
    assert s[0] == np.float32(1e-8)
    assert q.tolist() == [[0, 3, -5]]
