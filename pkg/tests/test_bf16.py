"""Unit tests for float32 <-> bfloat16 conversion."""

from __future__ import annotations

import ml_dtypes
import numpy as np
import pytest

from pagetopk.bf16 import (
    EXPONENT_MASK,
    bf16_to_f32,
    f32_to_bf16,
    is_nan_bf16,
    round_f32_to_bf16_value,
)

N_RANDOM = 20_000
SEED = 2024


def all_finite_patterns() -> np.ndarray:
    """Every bf16 bit pattern whose exponent field is not all ones."""
    bits = np.arange(1 << 16, dtype=np.uint16)
    return bits[(bits & EXPONENT_MASK) != EXPONENT_MASK]


# ---------------------------------------------------------------------------
# Round-to-nearest-even against known vectors
# ---------------------------------------------------------------------------

KNOWN = [
    (0.0, 0x0000),
    (-0.0, 0x8000),
    (1.0, 0x3F80),
    (-1.0, 0xBF80),
    (2.0, 0x4000),
    # halfway between 0x3F80 and 0x3F81, even mantissa wins
    (1.00390625, 0x3F80),
    # halfway between 0x3F81 and 0x3F82, rounds up to even
    (1.01171875, 0x3F82),
    # just above halfway rounds up
    (1.0039066, 0x3F81),
    # float32 max overflows to bf16 infinity
    (3.4028234663852886e38, 0x7F80),
    (float("inf"), 0x7F80),
    (float("-inf"), 0xFF80),
]


class TestRounding:
    def test_known_vectors(self) -> None:
        for value, bits in KNOWN:
            got = int(f32_to_bf16(np.array([value], dtype=np.float32))[0])
            assert got == bits, f"{value} -> {got:#06x}, want {bits:#06x}"

    def test_matches_reference_library(self) -> None:
        rng = np.random.default_rng(SEED)
        x = rng.standard_normal(N_RANDOM).astype(np.float32)
        x *= np.float32(10.0) ** rng.integers(-18, 19, N_RANDOM).astype(np.float32)
        ours = f32_to_bf16(x)
        ref = x.astype(ml_dtypes.bfloat16).view(np.uint16)
        np.testing.assert_array_equal(ours, ref)

    def test_exact_values_pass_through(self) -> None:
        # every finite bf16 value widens to f32 and converts back unchanged
        patterns = all_finite_patterns()
        back = f32_to_bf16(bf16_to_f32(patterns))
        np.testing.assert_array_equal(back, patterns)

    def test_nan_propagates_quiet(self) -> None:
        out = f32_to_bf16(np.array([np.nan], dtype=np.float32))
        assert is_nan_bf16(out)[0]

    def test_round_value_helper(self) -> None:
        rng = np.random.default_rng(SEED + 1)
        x = rng.standard_normal(257).astype(np.float32)
        rounded = round_f32_to_bf16_value(x)
        np.testing.assert_array_equal(
            rounded, bf16_to_f32(f32_to_bf16(x))
        )


# ---------------------------------------------------------------------------
# Widening
# ---------------------------------------------------------------------------

class TestWidening:
    def test_widening_is_exact(self) -> None:
        patterns = all_finite_patterns()
        widened = bf16_to_f32(patterns)
        assert widened.dtype == np.float32
        # reinterpreting the top 16 bits recovers the pattern
        np.testing.assert_array_equal(
            (widened.view(np.uint32) >> 16).astype(np.uint16), patterns
        )

    def test_nan_detection(self) -> None:
        bits = np.array([0x7F80, 0xFF80, 0x7FC0, 0x7F81, 0x0001], dtype=np.uint16)
        np.testing.assert_array_equal(
            is_nan_bf16(bits), [False, False, True, True, False]
        )


# ---------------------------------------------------------------------------
# Rounding is monotone
# ---------------------------------------------------------------------------

def test_rounding_monotone_on_random_pairs() -> None:
    rng = np.random.default_rng(SEED + 2)
    for _ in range(50):
        x = np.sort(rng.standard_normal(1000).astype(np.float32) * 100.0)
        rounded = bf16_to_f32(f32_to_bf16(x))
        assert np.all(np.diff(rounded) >= 0.0)
