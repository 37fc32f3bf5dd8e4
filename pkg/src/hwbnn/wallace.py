"""Wallace-style Gaussian generators built on a 4-point Hadamard unit.

The ring model (:class:`WallaceRing`) follows a shared-controller layout:

* cycle ``c``: unit ``u`` reads the frame starting at
  ``r_u = (4c + 4u) mod K`` of its own pool (one-frame stagger per unit);
* the four transformed numbers are emitted as this cycle's output;
* they are rotated by a 2-bit select taken from a 16-bit LFSR in the
  controller and written into unit ``u+1``'s pool at
  ``r_{u+1} - 3 .. r_{u+1}``, i.e. the destination's previous frame shifted by
  one number.  Those positions have all been consumed by the destination, so
  every pool entry is read exactly once between two writes.

Writes commit at the end of a cycle, after all reads.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fxp import DEFAULT_SPEC, FixedSpec, quantize_array, saturate
from .rlf import LfsrUniform


# -- inverse normal CDF -------------------------------------------------------

# Rational approximation of the normal quantile (central region and tails).
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)
_P_LOW = 0.02425


def _horner(coefs, x):
    acc = np.zeros_like(x) + coefs[0]
    for c in coefs[1:]:
        acc = acc * x + c
    return acc


def inverse_normal_cdf(p):
    """Normal quantile for p in (0, 1), vectorized."""
    p = np.asarray(p, dtype=np.float64)
    if np.any((p <= 0) | (p >= 1)):
        raise ValueError("p must lie strictly inside (0, 1)")
    out = np.empty_like(p)
    lo = p < _P_LOW
    hi = p > 1 - _P_LOW
    mid = ~(lo | hi)

    q = p[mid] - 0.5
    r = q * q
    out[mid] = _horner(_A, r) * q / (_horner(_B, r) * r + 1.0)

    q = np.sqrt(-2.0 * np.log(p[lo]))
    out[lo] = _horner(_C, q) / (_horner(_D, q) * q + 1.0)

    q = np.sqrt(-2.0 * np.log1p(-p[hi]))
    out[hi] = -_horner(_C, q) / (_horner(_D, q) * q + 1.0)
    return out if out.ndim else float(out)


# -- Hadamard unit ------------------------------------------------------------

def hadamard4(x, quantized=False, spec: FixedSpec = DEFAULT_SPEC):
    """4-point transform over the last axis.

    ``t = (x1 + x2 + x3 + x4) / 2``; returns ``(t - x1, t - x2, x3 - t, x4 - t)``.
    In quantized mode ``x`` holds integer raws, the halving is a one-bit
    arithmetic right shift and the result is ``(raws, saturated_mask)``.
    """
    x = np.asarray(x)
    if quantized:
        x = x.astype(np.int64)
        t = x.sum(axis=-1, keepdims=True) >> 1
    else:
        x = x.astype(np.float64)
        t = x.sum(axis=-1, keepdims=True) * 0.5
    y = np.concatenate([t - x[..., :2], x[..., 2:] - t], axis=-1)
    if quantized:
        return saturate(y, spec)
    return y


# -- pools ----------------------------------------------------------------------

@dataclass
class WallacePool:
    values: np.ndarray
    read_cursor: int = 0
    write_cursor: int = 0
    quantized: bool = False
    spec: FixedSpec = DEFAULT_SPEC
    saturations: int = 0

    def __post_init__(self):
        if len(self.values) % 4:
            raise ValueError(f"pool size {len(self.values)} is not a multiple of 4")

    @property
    def size(self):
        return len(self.values)

    def real_values(self):
        if self.quantized:
            return self.values * self.spec.step
        return self.values

    def energy(self):
        v = self.values.astype(np.float64)
        return float(v @ v)


def _uniform_open(rng, size):
    # 53-bit uniforms strictly inside (0, 1)
    k = rng.integers(0, 1 << 53, size=size, dtype=np.int64)
    return (k + 0.5) / float(1 << 53)


def init_pool(size: int, seed: int, quantized=False, spec: FixedSpec = DEFAULT_SPEC) -> WallacePool:
    """Fill a pool with inverse-CDF Gaussians drawn from a seeded uniform source."""
    if size % 4:
        raise ValueError(f"pool size {size} is not a multiple of 4")
    rng = np.random.Generator(np.random.Philox(seed))
    values = inverse_normal_cdf(_uniform_open(rng, size))
    if quantized:
        values, _ = quantize_array(values, spec)
    return WallacePool(values, quantized=quantized, spec=spec)


def _transform(pool: WallacePool, x):
    if pool.quantized:
        y, sat = hadamard4(x, True, pool.spec)
        pool.saturations += int(sat.sum())
        return y
    return hadamard4(x)


def software_wallace_step(pool: WallacePool, loops: int = 1, rng=None) -> np.ndarray:
    """``loops`` passes over random disjoint quadruples; returns the last pass.

    Each pass permutes the pool indices with the uniform source, transforms
    the K/4 quadruples and writes them back in place.  Output order is the
    order of generation.
    """
    if loops < 1:
        raise ValueError("loops must be >= 1")
    rng = rng if rng is not None else LfsrUniform(1)
    K = pool.size
    for _ in range(loops):
        perm = rng.permutation(K)
        y = _transform(pool, pool.values[perm].reshape(-1, 4)).ravel()
        pool.values[perm] = y
    return y


def wallace_nss_step(pool: WallacePool) -> np.ndarray:
    """Sequential quadruple at the read cursor, single pass, written in place."""
    r = pool.read_cursor
    y = _transform(pool, pool.values[r:r + 4])
    pool.values[r:r + 4] = y
    pool.read_cursor = pool.write_cursor = (r + 4) % pool.size
    return y


def software_stream(count: int, pool_size: int, seed: int, loops: int = 1) -> np.ndarray:
    pool = init_pool(pool_size, seed)
    rng = LfsrUniform(seed)
    out = []
    n = 0
    while n < count:
        y = software_wallace_step(pool, loops, rng)
        out.append(y.copy())
        n += len(y)
    return np.concatenate(out)[:count]


def nss_stream(count: int, pool_size: int, seed: int, quantized=True,
               spec: FixedSpec = DEFAULT_SPEC) -> np.ndarray:
    pool = init_pool(pool_size, seed, quantized, spec)
    out = np.empty(-(-count // 4) * 4, dtype=pool.values.dtype)
    for k in range(0, len(out), 4):
        out[k:k + 4] = wallace_nss_step(pool)
    out = out[:count]
    return out * spec.step if quantized else out


# -- ring -------------------------------------------------------------------

def _lfsr16(state):
    return (state >> 1) ^ (0xB400 if state & 1 else 0)


@dataclass
class WallaceRing:
    """``rings`` independent rings of ``units`` Wallace units, pool ``pool`` each.

    ``pools`` has shape (rings, units, pool); all rings share one controller
    schedule but start from different initial pools.
    """
    units: int = 8
    pool: int = 256
    seed: int = 0
    rings: int = 1
    quantized: bool = False
    spec: FixedSpec = DEFAULT_SPEC
    pools: np.ndarray = field(init=False, repr=False)
    cycle: int = field(default=0, init=False)
    select: int = field(init=False)
    saturations: int = field(default=0, init=False)

    def __post_init__(self):
        if self.pool % 4 or self.pool < 8:
            raise ValueError(f"pool size {self.pool} must be a multiple of 4 and >= 8")
        if self.units < 1:
            raise ValueError("need at least one unit")
        rng = np.random.Generator(np.random.Philox(self.seed))
        z = inverse_normal_cdf(_uniform_open(rng, (self.rings, self.units, self.pool)))
        if self.quantized:
            z, _ = quantize_array(z, self.spec)
        self.pools = z
        self.select = int(rng.integers(1, 1 << 16))
        self._frame = np.arange(4)
        self._units = np.arange(self.units)

    @property
    def memory(self) -> int:
        """Pool entries per ring."""
        return self.units * self.pool

    def destination(self, unit: int) -> int:
        return (unit + 1) % self.units

    def schedule(self, cycle: int | None = None):
        """Read positions (units, 4) and write positions (units, 4) of a cycle.

        Row ``u`` of the write table addresses unit ``destination(u)``.
        """
        c = self.cycle if cycle is None else cycle
        K = self.pool
        base = (4 * c + 4 * self._units) % K
        reads = (base[:, None] + self._frame) % K
        dest_base = base[(self._units + 1) % self.units]
        writes = (dest_base[:, None] - 3 + self._frame) % K
        return reads, writes

    def ring_step(self) -> np.ndarray:
        """Advance one cycle; returns the emitted samples, shape (rings, units, 4)."""
        reads, writes = self.schedule()
        x = np.take_along_axis(self.pools, np.broadcast_to(reads, (self.rings,) + reads.shape), axis=2)
        if self.quantized:
            y, sat = hadamard4(x, True, self.spec)
            self.saturations += int(sat.sum())
        else:
            y = hadamard4(x)
        rot = self.select & 3
        written = np.roll(y, rot, axis=2) if rot else y
        dest = (self._units + 1) % self.units
        self.pools[:, dest[:, None], writes] = written
        self.select = _lfsr16(self.select)
        self.cycle += 1
        return y

    def generate(self, count: int) -> np.ndarray:
        """Flattened output stream; ring r contributes slot r of every cycle block."""
        per = self.rings * self.units * 4
        cycles = -(-count // per)
        out = np.empty((cycles, self.rings, self.units, 4), dtype=self.pools.dtype)
        for k in range(cycles):
            out[k] = self.ring_step()
        flat = out.reshape(-1)[:count]
        return flat * self.spec.step if self.quantized else flat

    def energy(self) -> float:
        v = self.pools.astype(np.float64)
        return float((v * v).sum())
