"""Layer-wise uniform symmetric weight quantization.

Each weighted layer gets its own step size ``max(|W|) / (2^(n_bits-1) - 1)``
so the largest magnitude lands exactly on the top positive code. Codes of a
freshly quantized layer stay inside +/-(2^(n_bits-1) - 1); the extra
most-negative two's-complement code -2^(n_bits-1) is reachable only through
bit manipulation and dequantizes like any other code. Steps are frozen at
quantization time and are not part of the attack surface.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn


class QuantizationError(ValueError):
    pass


def check_bits(n_bits):
    if not isinstance(n_bits, int) or not 2 <= n_bits <= 16:
        raise QuantizationError(f"n_bits must be an int in [2, 16], got {n_bits!r}")
    return n_bits


@dataclass
class QuantizedLayer:
    """Integer codes plus the frozen dequantization step for one layer."""

    codes: np.ndarray  # int64, same shape as the float weight tensor
    step: float
    n_bits: int

    def __post_init__(self):
        check_bits(self.n_bits)
        self.codes = np.asarray(self.codes, np.int64)
        self.step = float(self.step)
        if not (self.step > 0.0 and np.isfinite(self.step)):
            raise QuantizationError(f"step must be a positive finite real, got {self.step!r}")
        lo, hi = -(2 ** (self.n_bits - 1)), 2 ** (self.n_bits - 1) - 1
        if self.codes.size and (self.codes.min() < lo or self.codes.max() > hi):
            raise QuantizationError(f"codes outside [{lo}, {hi}] for n_bits={self.n_bits}")

    @property
    def num_weights(self):
        return int(self.codes.size)

    @property
    def num_bits(self):
        return self.num_weights * self.n_bits

    def dequantize(self):
        return self.codes.astype(nn.FLOAT) * self.step

    def clone(self):
        return QuantizedLayer(self.codes.copy(), self.step, self.n_bits)


def compute_step(weights, n_bits):
    """Step size putting max |w| on the top positive code."""
    check_bits(n_bits)
    w = np.asarray(weights, nn.FLOAT)
    peak = float(np.abs(w).max()) if w.size else 0.0
    if peak == 0.0:
        raise QuantizationError("all-zero weight tensor: step size undefined")
    if not np.isfinite(peak):
        raise QuantizationError("non-finite weights cannot be quantized")
    return peak / (2 ** (n_bits - 1) - 1)


def round_half_away_from_zero(x):
    # np.round ties to even; the codec contract wants ties away from zero.
    x = np.asarray(x, nn.FLOAT)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quantize_layer(weights, n_bits):
    w = np.asarray(weights, nn.FLOAT)
    step = compute_step(w, n_bits)
    codes = round_half_away_from_zero(w / step).astype(np.int64)
    return QuantizedLayer(codes, step, n_bits)


def dequantize(q):
    """Float weights ``codes * step`` for a quantized layer."""
    return q.dequantize()


def ste_backward(upstream):
    """Straight-through estimator: gradients pass through rounding unchanged."""
    return upstream


def quantize_model(model, n_bits):
    """Fresh quantized copy of a float-mode model; the input is untouched."""
    check_bits(n_bits)
    if model.mode != "float":
        raise nn.ModeError("quantize_model expects a float-mode model")
    out = model.clone()
    for i in out.weighted_indices():
        layer = out.layers[i]
        layer.q = quantize_layer(layer.weight, n_bits)
        layer.weight = None
    return out
