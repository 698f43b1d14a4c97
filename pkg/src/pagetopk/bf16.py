"""Conversions between 32-bit floats and 16-bit brain floats.

A brain float keeps the sign bit, the full 8-bit exponent, and the top 7
mantissa bits of an IEEE binary32 value, so a bf16 bit pattern widened with
16 zero bits is itself a valid binary32. Narrowing rounds to nearest, ties
to even, which is the only part that needs care.
"""

from __future__ import annotations

import numpy as np

EXPONENT_MASK = 0x7F80
MANTISSA_MASK = 0x007F
SIGN_MASK = 0x8000


def f32_to_bf16(values: np.ndarray | float) -> np.ndarray:
    """Round binary32 values to bf16 bit patterns (round to nearest even).

    Returns uint16 bit patterns. NaN inputs stay NaN (quieted) instead of
    being carried into the rounding add, which could overflow the payload
    into the exponent.
    """
    arr = np.asarray(values, dtype=np.float32)
    bits = arr.view(np.uint32)
    lsb = (bits >> 16) & np.uint32(1)
    rounded = (bits + np.uint32(0x7FFF) + lsb) >> 16
    out = rounded.astype(np.uint16)
    nan = np.isnan(arr)
    if np.any(nan):
        out = np.where(nan, ((bits >> 16) | np.uint32(0x0040)).astype(np.uint16), out)
    return out


def bf16_to_f32(bits: np.ndarray | int) -> np.ndarray:
    """Widen bf16 bit patterns back to exact binary32 values."""
    arr = np.asarray(bits, dtype=np.uint16)
    return (arr.astype(np.uint32) << 16).view(np.float32)


def is_nan_bf16(bits: np.ndarray | int) -> np.ndarray:
    """True where a bf16 bit pattern encodes NaN."""
    arr = np.asarray(bits, dtype=np.uint16)
    return ((arr & EXPONENT_MASK) == EXPONENT_MASK) & ((arr & MANTISSA_MASK) != 0)


def round_f32_to_bf16_value(values: np.ndarray | float) -> np.ndarray:
    """Round to bf16 and widen back, i.e. quantize in the f32 domain."""
    return bf16_to_f32(f32_to_bf16(values))
