"""Saturating two's-complement fixed-point arithmetic.

Scalars are :class:`FxVal`; tensors are plain integer ``ndarray`` raws that
travel alongside a :class:`FixedSpec`.  All rounding is round-half-even and
saturation happens once, at write-back.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class FixedSpec:
    total_bits: int = 8
    frac_bits: int = 5
    signed: bool = True

    def __post_init__(self):
        if not 2 <= self.total_bits <= 32:
            raise ValueError(f"total_bits must be in [2, 32], got {self.total_bits}")
        if not 0 <= self.frac_bits < self.total_bits:
            raise ValueError(
                f"frac_bits must be in [0, total_bits), got {self.frac_bits} for {self.total_bits} bits")

    @property
    def raw_min(self) -> int:
        return -(1 << (self.total_bits - 1)) if self.signed else 0

    @property
    def raw_max(self) -> int:
        if self.signed:
            return (1 << (self.total_bits - 1)) - 1
        return (1 << self.total_bits) - 1

    @property
    def step(self) -> float:
        return 2.0 ** -self.frac_bits

    @property
    def min_value(self) -> float:
        return self.raw_min * self.step

    @property
    def max_value(self) -> float:
        return self.raw_max * self.step

    def __str__(self):
        kind = "s" if self.signed else "u"
        return f"{kind}{self.total_bits}.{self.frac_bits}"


DEFAULT_SPEC = FixedSpec(8, 5, True)


def spec_for_bits(total_bits: int) -> FixedSpec:
    """Signed spec with three integer bits (sign included) for a sweep point."""
    return FixedSpec(total_bits, max(total_bits - 3, 0), True)


@dataclass(frozen=True)
class FxVal:
    raw: int
    spec: FixedSpec = DEFAULT_SPEC
    saturated: bool = field(default=False, compare=False)

    def __post_init__(self):
        if not self.spec.raw_min <= self.raw <= self.spec.raw_max:
            raise ValueError(f"raw {self.raw} outside {self.spec}")

    def to_real(self) -> float:
        return self.raw * self.spec.step

    def __float__(self):
        return self.to_real()

    def __add__(self, other):
        return fx_add(self, other)

    def __mul__(self, other):
        return fx_mul(self, other)


# -- array kernels -----------------------------------------------------------

def saturate(raw, spec: FixedSpec):
    """Clip integer raws into the spec range; returns (clipped, saturated_mask)."""
    raw = np.asarray(raw, dtype=np.int64)
    clipped = np.clip(raw, spec.raw_min, spec.raw_max)
    return clipped, clipped != raw


def quantize_array(x, spec: FixedSpec = DEFAULT_SPEC):
    """Round reals onto the spec grid (half-even) and saturate."""
    scaled = np.rint(np.asarray(x, dtype=np.float64) * (1 << spec.frac_bits))
    lo, hi = spec.raw_min, spec.raw_max
    sat = (scaled < lo) | (scaled > hi)
    return np.clip(scaled, lo, hi).astype(np.int64), sat


def to_real_array(raw, spec: FixedSpec = DEFAULT_SPEC):
    return np.asarray(raw, dtype=np.float64) * spec.step


def shift_round_even(x, shift: int):
    """Arithmetic right shift by ``shift`` with round-half-even on the dropped bits."""
    x = np.asarray(x, dtype=np.int64)
    if shift <= 0:
        return x << (-shift) if shift < 0 else x
    q = x >> shift
    rem = x - (q << shift)
    half = 1 << (shift - 1)
    up = (rem > half) | ((rem == half) & ((q & 1) == 1))
    return q + up


def add_raw(a, b, spec: FixedSpec):
    return saturate(np.asarray(a, dtype=np.int64) + np.asarray(b, dtype=np.int64), spec)


def mul_raw(a, b, spec: FixedSpec):
    prod = np.asarray(a, dtype=np.int64) * np.asarray(b, dtype=np.int64)
    return saturate(shift_round_even(prod, spec.frac_bits), spec)


def requantize(raw, src: FixedSpec, dst: FixedSpec):
    """Move raws between grids (round-half-even when dropping bits)."""
    return saturate(shift_round_even(raw, src.frac_bits - dst.frac_bits), dst)


# -- scalar API --------------------------------------------------------------

def quantize(x: float, spec: FixedSpec = DEFAULT_SPEC) -> FxVal:
    raw, sat = quantize_array(x, spec)
    return FxVal(int(raw), spec, bool(sat))


def _check(a: FxVal, b: FxVal):
    if a.spec != b.spec:
        raise ValueError(f"fixed-point spec mismatch: {a.spec} vs {b.spec}")


def fx_add(a: FxVal, b: FxVal) -> FxVal:
    _check(a, b)
    raw, sat = add_raw(a.raw, b.raw, a.spec)
    return FxVal(int(raw), a.spec, bool(sat))


def fx_mul(a: FxVal, b: FxVal) -> FxVal:
    _check(a, b)
    raw, sat = mul_raw(a.raw, b.raw, a.spec)
    return FxVal(int(raw), a.spec, bool(sat))


def fx_sub(a: FxVal, b: FxVal) -> FxVal:
    _check(a, b)
    raw, sat = saturate(a.raw - b.raw, a.spec)
    return FxVal(int(raw), a.spec, bool(sat))
