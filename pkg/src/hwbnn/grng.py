"""Uniform interface over the Gaussian generators.

Streams (``make_stream``) feed the statistics harness; sources
(``make_source``) feed weight sampling and hand out either reals or
fixed-point raws.
"""
from __future__ import annotations

import numpy as np

from .fxp import DEFAULT_SPEC, FixedSpec, quantize_array, requantize
from .rlf import N_DEFAULT, RlfArray, encode8
from .wallace import (WallaceRing, _uniform_open, inverse_normal_cdf, nss_stream,
                      software_stream)

GRNG_KINDS = ("rlf", "wallace", "software", "nss", "reference")

# Default sizes: 64-lane RLF array, 8 units x 256 ring, 4096 software pool.
STREAM_DEFAULTS = {
    "rlf": {"lanes": 64},
    "wallace": {"units": 8, "pool": 256},
    "software": {"pool": 4096, "loops": 1},
    "nss": {"pool": 256},
    "reference": {},
}


def make_stream(kind: str, count: int, seed: int, **cfg) -> np.ndarray:
    """``count`` standardized samples from a freshly seeded generator."""
    if kind not in STREAM_DEFAULTS:
        raise ValueError(f"unknown generator {kind!r}; choose from {GRNG_KINDS}")
    opts = dict(STREAM_DEFAULTS[kind])
    opts.update({k: v for k, v in cfg.items() if v is not None})
    if kind == "rlf":
        return RlfArray(opts["lanes"], seed).generate(count)
    if kind == "wallace":
        return WallaceRing(opts["units"], opts["pool"], seed,
                           quantized=opts.get("quantized", False)).generate(count)
    if kind == "software":
        return software_stream(count, opts["pool"], seed, opts["loops"])
    if kind == "nss":
        return nss_stream(count, opts["pool"], seed, quantized=opts.get("quantized", True))
    rng = np.random.Generator(np.random.Philox(seed))
    return inverse_normal_cdf(_uniform_open(rng, count))


def raw_sum_stream(count: int, seed: int, lanes: int = 64) -> np.ndarray:
    return RlfArray(lanes, seed).generate(count, raw=True)


class _Buffered:
    """Chunked draws from a cycle-based generator."""

    def __init__(self):
        self._pending = np.empty(0)

    def _produce(self, count):
        raise NotImplementedError

    def _take(self, count):
        if self._pending.size < count:
            fresh = self._produce(count - self._pending.size)
            self._pending = np.concatenate([self._pending, fresh])
        out, self._pending = self._pending[:count], self._pending[count:]
        return out

    def draw(self, shape):
        size = int(np.prod(shape))
        return self._take(size).astype(np.float64).reshape(shape)

    def draw_raw(self, shape, spec: FixedSpec = DEFAULT_SPEC):
        raw, _ = quantize_array(self.draw(shape), spec)
        return raw


class ReferenceSource(_Buffered):
    name = "reference"

    def __init__(self, seed: int = 0):
        super().__init__()
        self.rng = np.random.Generator(np.random.Philox(seed))

    def _produce(self, count):
        return inverse_normal_cdf(_uniform_open(self.rng, max(count, 1)))


class RlfSource(_Buffered):
    """RLF array; the 8-bit path encodes standardized sums onto the default grid."""
    name = "rlf"

    def __init__(self, seed: int = 0, lanes: int = 1024):
        super().__init__()
        self.array = RlfArray(lanes, seed)

    def _produce(self, count):
        cycles = -(-count // self.array.m)
        return self.array.raw_sums(cycles).ravel().astype(np.int64)

    def draw(self, shape):
        size = int(np.prod(shape))
        z = (self._take(size) - N_DEFAULT / 2.0) / np.sqrt(N_DEFAULT / 4.0)
        return z.reshape(shape)

    def draw_raw(self, shape, spec: FixedSpec = DEFAULT_SPEC):
        raw8 = encode8(self.draw(shape))
        return requantize(raw8, DEFAULT_SPEC, spec)[0]


class WallaceSource(_Buffered):
    """Bank of independent rings; quantized rings hand out native raws."""
    name = "wallace"

    def __init__(self, seed: int = 0, units: int = 8, pool: int = 256, rings: int = 128,
                 quantized: bool = True, spec: FixedSpec = DEFAULT_SPEC):
        super().__init__()
        self.ring = WallaceRing(units, pool, seed, rings=rings, quantized=quantized, spec=spec)

    def _produce(self, count):
        per = self.ring.rings * self.ring.units * 4
        cycles = -(-count // per)
        out = np.empty((cycles, self.ring.rings, self.ring.units, 4), dtype=self.ring.pools.dtype)
        for k in range(cycles):
            out[k] = self.ring.ring_step()
        return out.ravel()

    def draw(self, shape):
        v = super().draw(shape)
        return v * self.ring.spec.step if self.ring.quantized else v

    def draw_raw(self, shape, spec: FixedSpec = DEFAULT_SPEC):
        if not self.ring.quantized:
            return super().draw_raw(shape, spec)
        size = int(np.prod(shape))
        raw = self._take(size).astype(np.int64).reshape(shape)
        return requantize(raw, self.ring.spec, spec)[0]


class ZeroSource:
    """Forces every epsilon to zero; turns the BNN into its mean network."""
    name = "zero"

    def draw(self, shape):
        return np.zeros(shape)

    def draw_raw(self, shape, spec: FixedSpec = DEFAULT_SPEC):
        return np.zeros(shape, dtype=np.int64)


def make_source(kind: str, seed: int = 0, **cfg):
    if kind == "rlf":
        return RlfSource(seed, **cfg)
    if kind == "wallace":
        return WallaceSource(seed, **cfg)
    if kind == "reference":
        return ReferenceSource(seed)
    if kind == "zero":
        return ZeroSource()
    raise ValueError(f"no weight-sampling source for {kind!r}")
