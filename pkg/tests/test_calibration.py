import numpy as np
import pytest

from tgquant.calibration import RadiusTable, calibrate_fixed_radii, sample_radius
from tgquant.errors import EmptyCalibration, ParseError
from tgquant.quant_core import QuantConfig, qdq_with_radii, quantize_activations
from tgquant.quant_layer import QuantLinearSpec, quant_linear_forward
from tgquant.weight_quant import pack_weights

CFG = QuantConfig()


def _samples(n=4, seed=0):
    rng = np.random.default_rng(seed)
    return [(rng.standard_t(3, size=(16, 64)) * (i + 1)).astype(np.float32) for i in range(n)]


def test_max_over_samples():
    samples = _samples()
    table = calibrate_fixed_radii(samples, CFG, layer="blk0")
    per_sample = [sample_radius(s, CFG) for s in samples]
    assert table.radius("blk0") == max(per_sample)


def test_single_sample_matches_per_tensor_radius():
    (s,) = _samples(1)
    r = calibrate_fixed_radii([s], CFG).radius("layer")
    _, table = quantize_activations(s, CFG.replace(mode="per_tensor"))
    assert r == float(table.c_final[0, 0])


def test_empty():
    with pytest.raises(EmptyCalibration):
        calibrate_fixed_radii([], CFG)


def test_json_round_trip(tmp_path):
    table = calibrate_fixed_radii(_samples(2), CFG, layer="a", sources=["x.npy", "y.npy"])
    table.save(tmp_path / "r.json")
    back = RadiusTable.load(tmp_path / "r.json")
    assert back.radii == table.radii
    assert back.sources == ("x.npy", "y.npy")
    assert back.cfg == CFG
    with pytest.raises(KeyError):
        back.radius("missing")


def test_bad_json():
    with pytest.raises(ParseError):
        RadiusTable.from_json("{not json")
    with pytest.raises(ParseError):
        RadiusTable.from_json('{"a": -1}')


def test_fixed_radius_forward_uses_frozen_value():
    samples = _samples(3)
    x = samples[0]
    W = np.random.default_rng(1).normal(size=(8, 64)).astype(np.float32)
    weights = pack_weights(W)
    # calibrated on x alone, the frozen radius reproduces the online per-tensor path
    r_self = calibrate_fixed_radii([x], CFG).radius("layer")
    fixed = quant_linear_forward(x, QuantLinearSpec(weights, CFG, fixed_radius=r_self))
    online = quant_linear_forward(x, QuantLinearSpec(weights, CFG.replace(mode="per_tensor")))
    assert fixed.tobytes() == online.tobytes()
    # calibrated on all samples, the radius is frozen at the largest one
    r = calibrate_fixed_radii(samples, CFG).radius("layer")
    assert r > r_self
    x_hat = qdq_with_radii(x, r, CFG)
    assert np.abs(x_hat.astype(np.float64)).max() <= r
