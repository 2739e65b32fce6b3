"""Simulated quantized linear layer and the 4D tokenization branch."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, ShapeError
from .quant_core import QuantConfig, qdq_with_radii, quantize_activations
from .weight_quant import PackedWeights, dequantize_weights


@dataclass(frozen=True)
class QuantLinearSpec:
    """A linear layer with static packed weights.

    ``fixed_radius`` switches the activation side from online statistics to
    a frozen per-tensor radius (see :mod:`tgquant.calibration`).
    """

    weights: PackedWeights
    cfg: QuantConfig = QuantConfig()
    bias: Optional[np.ndarray] = None
    fixed_radius: Optional[float] = None

    def __post_init__(self):
        if self.bias is not None:
            bias = np.asarray(self.bias, dtype=np.float32)
            if bias.shape != (self.weights.rows,):
                raise ShapeError(f"bias shape {bias.shape} != ({self.weights.rows},)")
            object.__setattr__(self, "bias", bias)
        if self.fixed_radius is not None and not self.fixed_radius > 0:
            raise ConfigError("fixed radius must be positive")

    @property
    def radii_mode(self) -> str:
        return "online" if self.fixed_radius is None else "fixed"


def matmul_f64(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``x @ w.T`` accumulated in float64 with a fixed loop order (no BLAS)."""
    return np.einsum("ni,oi->no", x.astype(np.float64), w.astype(np.float64), optimize=False)


def quant_linear_forward(x: np.ndarray, spec: QuantLinearSpec) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim < 1 or x.shape[-1] != spec.weights.cols:
        raise ShapeError(f"input last dim {x.shape[-1:]} != weight in-features {spec.weights.cols}")
    if spec.fixed_radius is None:
        x_hat, _ = quantize_activations(x, spec.cfg)
    else:
        x_hat = qdq_with_radii(x, spec.fixed_radius, spec.cfg)
    w_hat = dequantize_weights(spec.weights)
    y = matmul_f64(x_hat.reshape(-1, x.shape[-1]), w_hat).astype(np.float32)
    if spec.bias is not None:
        y = y + spec.bias
    return y.reshape(*x.shape[:-1], spec.weights.rows)


def tokenize_4d(x: np.ndarray) -> np.ndarray:
    """``(B, C, H, W)`` -> ``(B, H*W, C)``; tokens in row-major spatial order."""
    x = np.asarray(x)
    if x.ndim != 4:
        raise ShapeError(f"expected a 4-D tensor, got shape {x.shape}")
    b, c, h, w = x.shape
    return np.ascontiguousarray(x.transpose(0, 2, 3, 1)).reshape(b, h * w, c)


def detokenize_4d(tokens: np.ndarray, height: int, width: int) -> np.ndarray:
    tokens = np.asarray(tokens)
    if tokens.ndim != 3 or tokens.shape[1] != height * width:
        raise ShapeError(f"cannot restore {tokens.shape} to a {height}x{width} grid")
    b, _, c = tokens.shape
    return np.ascontiguousarray(tokens.reshape(b, height, width, c).transpose(0, 3, 1, 2))


def quant_pointwise_conv(x: np.ndarray, spec: QuantLinearSpec) -> np.ndarray:
    """1x1 convolution on ``(B, C, H, W)`` via tokenize -> quantized linear -> restore."""
    tokens = tokenize_4d(x)
    h, w = np.shape(x)[2:]
    return detokenize_4d(quant_linear_forward(tokens, spec), h, w)
