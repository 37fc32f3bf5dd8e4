from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hwbnn.fxp import (DEFAULT_SPEC, FixedSpec, FxVal, fx_add, fx_mul, fx_sub, mul_raw,
                       quantize, quantize_array, requantize, shift_round_even, spec_for_bits)


def round_half_even(q: Fraction) -> int:
    fl = q.numerator // q.denominator
    rem = q - fl
    if rem > Fraction(1, 2) or (rem == Fraction(1, 2) and fl % 2 == 1):
        return fl + 1
    return fl


class TestSpec:
    def test_range_and_step(self):
        s = FixedSpec(8, 5)
        assert s.min_value == -4.0
        assert s.max_value == 4.0 - 2 ** -5
        assert s.step == 2 ** -5
        assert str(s) == "s8.5"

    @pytest.mark.parametrize("total,frac", [(1, 0), (33, 2), (8, 8), (8, -1)])
    def test_invalid(self, total, frac):
        with pytest.raises(ValueError):
            FixedSpec(total, frac)

    def test_sweep_split(self):
        assert spec_for_bits(8) == FixedSpec(8, 5)
        assert spec_for_bits(4).frac_bits == 1

    def test_raw_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            FxVal(128, DEFAULT_SPEC)


class TestQuantize:
    def test_zero(self):
        assert quantize(0.0).raw == 0

    def test_ln2(self):
        q = quantize(0.6931, FixedSpec(8, 5))
        assert q.raw == 22 and q.to_real() == 0.6875

    def test_saturates(self):
        q = quantize(100.0, FixedSpec(8, 5))
        assert q.raw == 127 and q.saturated
        assert q.to_real() == 3.96875
        assert quantize(-100.0).raw == -128

    def test_ties_to_even(self):
        s = FixedSpec(8, 0)
        assert [quantize(v, s).raw for v in (0.5, 1.5, 2.5, -0.5, -1.5)] == [0, 2, 2, 0, -2]

    @given(st.floats(-3.99, 3.96, allow_nan=False))
    def test_round_trip_half_step(self, x):
        q = quantize(x)
        assert abs(q.to_real() - x) <= 2 ** -6 + 1e-15
        assert not q.saturated


class TestArithmetic:
    def test_add_inverse(self):
        assert fx_add(quantize(1.0), quantize(-1.0)).to_real() == 0.0

    def test_mul_half(self):
        assert fx_mul(quantize(0.5), quantize(0.5)).raw == 8

    def test_mul_identity_all(self):
        one = quantize(1.0)
        for r in range(-128, 128):
            assert fx_mul(FxVal(r), one).raw == r

    def test_spec_mismatch(self):
        with pytest.raises(ValueError):
            fx_add(quantize(1.0), quantize(1.0, FixedSpec(8, 4)))
        with pytest.raises(ValueError):
            fx_mul(quantize(1.0), quantize(1.0, FixedSpec(8, 4)))

    def test_sub(self):
        assert fx_sub(quantize(1.0), quantize(0.25)).to_real() == 0.75

    @pytest.mark.parametrize("spec", [FixedSpec(8, 5), FixedSpec(6, 3), FixedSpec(4, 1)])
    def test_mul_exhaustive_against_rational(self, spec):
        r = np.arange(spec.raw_min, spec.raw_max + 1)
        a, b = np.meshgrid(r, r)
        got, _ = mul_raw(a, b, spec)
        for x, y, g in zip(a.ravel()[::7], b.ravel()[::7], got.ravel()[::7]):
            exact = Fraction(int(x) * int(y), 1 << spec.frac_bits)
            want = min(max(round_half_even(exact), spec.raw_min), spec.raw_max)
            assert g == want
        assert got.min() >= spec.raw_min and got.max() <= spec.raw_max

    def test_add_exhaustive_saturation(self):
        r = np.arange(-128, 128)
        a, b = np.meshgrid(r, r)
        for x, y in zip(a.ravel()[::13], b.ravel()[::13]):
            v = fx_add(FxVal(int(x)), FxVal(int(y)))
            assert v.raw == min(max(int(x) + int(y), -128), 127)
            assert v.saturated == (not -128 <= int(x) + int(y) <= 127)


class TestKernels:
    @given(st.integers(-10 ** 9, 10 ** 9), st.integers(0, 12))
    def test_shift_round_even(self, x, s):
        assert int(shift_round_even(np.int64(x), s)) == round_half_even(Fraction(x, 1 << s))

    def test_requantize_widen_is_exact(self):
        raw = np.arange(-128, 128)
        wide, sat = requantize(raw, FixedSpec(8, 5), FixedSpec(16, 13))
        assert np.array_equal(wide, raw << 8) and not sat.any()

    def test_quantize_array_flags(self):
        raw, sat = quantize_array([0.0, 5.0, -5.0], DEFAULT_SPEC)
        assert raw.tolist() == [0, 127, -128]
        assert sat.tolist() == [False, True, True]
