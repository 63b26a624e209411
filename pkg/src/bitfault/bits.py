"""Two's-complement bit views of weight codes and the saturating
gradient-directed flip rule.

Bit vectors are most-significant-bit first: position 0 is the sign bit with
weight -2**(n_bits-1), position p > 0 carries +2**(n_bits-1-p). A
:class:`BitAddress` names one stored bit as (layer, flat weight offset,
position), rendered ``layer:offset:position``.

The flip rule moves every touched bit to the value that increases the loss
given the sign of its gradient, and saturates: a bit already at that value
stays put. Equivalently ``new_bit = (grad > 0)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class CodeRangeError(ValueError):
    pass


@dataclass(frozen=True)
class BitAddress:
    layer: int
    offset: int
    bit: int

    def __str__(self):
        return f"{self.layer}:{self.offset}:{self.bit}"

    @classmethod
    def parse(cls, text):
        layer, offset, bit = (int(part) for part in text.split(":"))
        return cls(layer, offset, bit)


def code_range(n_bits):
    return -(2 ** (n_bits - 1)), 2 ** (n_bits - 1) - 1


def bit_coefficients(n_bits):
    """Signed weight of each position, MSB first: [-2^(n-1), 2^(n-2), .., 2, 1]."""
    coeffs = 2 ** np.arange(n_bits - 1, -1, -1, dtype=np.int64)
    coeffs[0] = -coeffs[0]
    return coeffs


def encode_plane(codes, n_bits):
    """Two's-complement bits of an int array, shape (..., n_bits), MSB first."""
    c = np.asarray(codes, np.int64)
    lo, hi = code_range(n_bits)
    if c.size and (c.min() < lo or c.max() > hi):
        raise CodeRangeError(f"code outside [{lo}, {hi}] for n_bits={n_bits}")
    u = c & ((1 << n_bits) - 1)
    shifts = np.arange(n_bits - 1, -1, -1, dtype=np.int64)
    return ((u[..., None] >> shifts) & 1).astype(np.uint8)


def decode_plane(bits):
    """Inverse of :func:`encode_plane`; n_bits is the trailing axis length."""
    b = np.asarray(bits)
    n_bits = b.shape[-1]
    if b.size and not np.isin(b, (0, 1)).all():
        raise CodeRangeError("bit vectors must contain only 0/1")
    return b.astype(np.int64) @ bit_coefficients(n_bits)


def encode(code, n_bits):
    """Bit vector of one signed code, MSB first."""
    return encode_plane(np.asarray(code, np.int64), n_bits)


def decode(bits, n_bits=None):
    """Signed code of one bit vector; optional n_bits is a length check."""
    b = np.asarray(bits)
    if n_bits is not None and b.shape[-1] != n_bits:
        raise CodeRangeError(f"expected {n_bits} bits, got {b.shape[-1]}")
    return int(decode_plane(b))


def signs_from_gradients(grads):
    """Gradient signs in {-1, +1}; exact zeros map to +1."""
    g = np.asarray(grads)
    return np.where(g < 0, -1, 1).astype(np.int64)


def bfa_flip(bits, grad_signs):
    """Saturating gradient-directed flip of a bit vector.

    Returns ``(new_bits, mask)`` where ``mask`` marks the positions that
    actually changed; ``new_bits = bits XOR mask`` and every new bit equals
    ``1`` where its gradient sign is positive, ``0`` where negative.
    """
    b = np.asarray(bits, np.uint8)
    s = np.asarray(grad_signs, np.int64)
    if b.shape != s.shape:
        raise ValueError(f"bits shape {b.shape} != signs shape {s.shape}")
    if b.size and not np.isin(b, (0, 1)).all():
        raise CodeRangeError("bit vectors must contain only 0/1")
    if s.size and not np.isin(s, (-1, 1)).all():
        raise ValueError("grad_signs must be -1 or +1")
    toward = (s > 0).astype(np.uint8)
    mask = b ^ toward
    return toward.copy(), mask


def flip_bits_inplace(codes_flat, offsets, positions, n_bits):
    """Toggle stored bits of a flat int64 code array, in place.

    Repeated offsets compose by XOR, so two positions of the same weight in
    one call both take effect. Results are canonicalized back to signed codes,
    so toggling the sign bit can produce -2^(n_bits-1).
    """
    offsets = np.asarray(offsets, np.int64)
    positions = np.asarray(positions, np.int64)
    if positions.size and (positions.min() < 0 or positions.max() >= n_bits):
        raise CodeRangeError(f"bit position outside [0, {n_bits})")
    masks = np.int64(1) << (n_bits - 1 - positions)
    uniq, inv = np.unique(offsets, return_inverse=True)
    combined = np.zeros(len(uniq), np.int64)
    np.bitwise_xor.at(combined, inv, masks)
    full = np.int64((1 << n_bits) - 1)
    u = (codes_flat[uniq] & full) ^ combined
    codes_flat[uniq] = np.where(u >= (1 << (n_bits - 1)), u - (1 << n_bits), u)


def flip_code_bit(code, position, n_bits):
    """Single-code convenience wrapper around :func:`flip_bits_inplace`."""
    arr = np.array([code], np.int64)
    flip_bits_inplace(arr, [0], [position], n_bits)
    return int(arr[0])


def bit_gradients(weight_grad, step, n_bits):
    """Loss gradient of each stored bit via the chain rule.

    A unit increment of the bit at MSB-first position p moves the weight by
    coefficient(p) * step, so dL/db_p = dL/dw * step * coefficient(p).
    Accepts a scalar or an array of weight gradients; the bit axis is
    appended last.
    """
    g = np.asarray(weight_grad, np.float64)
    coeffs = bit_coefficients(n_bits).astype(np.float64)
    return g[..., None] * step * coeffs


def popcount(values):
    """Total set bits over an array of non-negative integers."""
    v = np.asarray(values)
    if v.size and v.min() < 0:
        raise ValueError("popcount is defined here for non-negative values only")
    return int(np.bitwise_count(v).sum())


def hamming_codes(a, b, n_bits):
    """Number of differing stored bits between two code arrays."""
    x = (np.asarray(a, np.int64) ^ np.asarray(b, np.int64)) & ((1 << n_bits) - 1)
    return popcount(x)
