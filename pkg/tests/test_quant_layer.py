import numpy as np
import pytest

import oracles
from tgquant.errors import ShapeError
from tgquant.quant_core import QuantConfig, quantize_activations
from tgquant.quant_layer import (
    QuantLinearSpec,
    detokenize_4d,
    quant_linear_forward,
    quant_pointwise_conv,
    tokenize_4d,
)
from tgquant.weight_quant import dequantize_weights, pack_weights


def _spec(O, I, seed=0, **kw):
    W = np.random.default_rng(seed).normal(size=(O, I)).astype(np.float32)
    return W, QuantLinearSpec(pack_weights(W, kw.pop("weight_bits", 4)), **kw)


def test_zero_input_zero_output():
    _, spec = _spec(6, 40)
    y = quant_linear_forward(np.zeros((3, 40), dtype=np.float32), spec)
    assert y.shape == (3, 6) and (y == 0).all()


def test_identity_weights_return_quantized_input():
    eye = np.eye(16, dtype=np.float32)
    spec = QuantLinearSpec(pack_weights(eye), QuantConfig(group_size=8))
    x = np.random.default_rng(1).normal(size=(4, 16)).astype(np.float32)
    x_hat, _ = quantize_activations(x, spec.cfg)
    # x_hat * 1 + 0 * others: equal values, though -0.0 comes back as +0.0
    np.testing.assert_array_equal(quant_linear_forward(x, spec), x_hat)


def test_matches_scalar_oracle_with_bias():
    rng = np.random.default_rng(2)
    W = rng.normal(size=(5, 70)).astype(np.float32)
    b = rng.normal(size=5).astype(np.float32)
    x = rng.standard_t(4, size=(3, 70)).astype(np.float32)
    spec = QuantLinearSpec(pack_weights(W), bias=b)
    y = quant_linear_forward(x, spec)
    x_ref = oracles.quantize_rows(x.astype(np.float64).tolist(), 32, 4, 1.0, 0.2)
    w_ref = dequantize_weights(spec.weights).astype(np.float64).tolist()
    ref = np.array(oracles.linear(x_ref, w_ref, b.astype(np.float64).tolist()))
    np.testing.assert_allclose(y, ref, rtol=1e-5, atol=1e-5)


def test_leading_dims_and_shape_errors():
    _, spec = _spec(3, 8, cfg=QuantConfig(group_size=4))
    x = np.ones((2, 5, 8), dtype=np.float32)
    assert quant_linear_forward(x, spec).shape == (2, 5, 3)
    with pytest.raises(ShapeError):
        quant_linear_forward(np.ones((2, 7), dtype=np.float32), spec)
    with pytest.raises(ShapeError):
        QuantLinearSpec(spec.weights, bias=np.ones(2))


def test_w8a8_close_to_float():
    rng = np.random.default_rng(3)
    W = rng.normal(size=(32, 64)).astype(np.float32)
    x = rng.normal(size=(16, 64)).astype(np.float32)
    spec = QuantLinearSpec(pack_weights(W, 8), QuantConfig(act_bits=8, weight_bits=8))
    y = quant_linear_forward(x, spec)
    ref = x.astype(np.float64) @ W.astype(np.float64).T
    assert np.linalg.norm(y - ref) / np.linalg.norm(ref) <= 0.02


def test_fixed_radius_mode():
    W, spec = _spec(4, 32)
    x = np.random.default_rng(4).normal(size=(3, 32)).astype(np.float32)
    c = float(np.abs(x).max())
    fixed = QuantLinearSpec(spec.weights, QuantConfig(tau=None, zr=None), fixed_radius=c)
    per_tensor = QuantLinearSpec(spec.weights, QuantConfig(tau=None, zr=None, mode="per_tensor"))
    assert fixed.radii_mode == "fixed" and spec.radii_mode == "online"
    assert quant_linear_forward(x, fixed).tobytes() == quant_linear_forward(x, per_tensor).tobytes()


def test_tokenize_example():
    x = np.arange(4, dtype=np.float32).reshape(1, 1, 2, 2)
    x = np.concatenate([x, x + 10], axis=1)  # channels 0 and 1
    assert tokenize_4d(x).tolist() == [[[0, 10], [1, 11], [2, 12], [3, 13]]]


def test_tokenize_round_trip_and_single_channel():
    x = np.random.default_rng(5).normal(size=(2, 3, 4, 5)).astype(np.float32)
    t = tokenize_4d(x)
    assert t.shape == (2, 20, 3)
    assert detokenize_4d(t, 4, 5).tobytes() == x.tobytes()
    one = np.random.default_rng(6).normal(size=(1, 1, 2, 3)).astype(np.float32)
    assert tokenize_4d(one).shape == (1, 6, 1)
    with pytest.raises(ShapeError):
        tokenize_4d(np.ones((2, 3, 4)))


def test_pointwise_conv_matches_token_path():
    x = np.random.default_rng(7).normal(size=(2, 8, 3, 3)).astype(np.float32)
    _, spec = _spec(5, 8, cfg=QuantConfig(group_size=4))
    y = quant_pointwise_conv(x, spec)
    assert y.shape == (2, 5, 3, 3)
    tokens = quant_linear_forward(tokenize_4d(x), spec)
    assert detokenize_4d(tokens, 3, 3).tobytes() == y.tobytes()
    with pytest.raises(ShapeError):
        quant_pointwise_conv(np.ones((8, 3, 3)), spec)
