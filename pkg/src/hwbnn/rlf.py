"""RAM-based linear feedback Gaussian generator.

Three models of the same bit-level process live here:

* :func:`rlf_flat_step` -- the plain five-XOR update on a flat seed vector.
  It is the reference every other path is checked against.
* :class:`RlfEngine` -- the banked engine: seed bits split over three RAM
  blocks by ``position mod 3``, a 7-slot buffer register per lane, one shared
  indexer, and an incrementally maintained popcount (tap register + result
  register).  Lanes are the word width of the seed memory.
* :class:`LfsrPcGenerator` -- the classical shift register followed by a full
  parallel counter, kept as a baseline.

A cycle of the banked engine with head ``h`` (n = 255, taps 250/252/253):

    buffer = [x(h+250) .. x(h+254) | x(h) x(h+1)]      (taps | heads)
    taps'  = taps XOR head masks                        (five-XOR update)
    write  taps'[0], taps'[1]  -> x(h+250), x(h+251)
    buffer = [taps'[2:5], x(h), x(h+1) | x(h+2), x(h+3)] (shift left by 2)
    read   x(h+2), x(h+3)                               (next heads)

so every cycle touches the RAM with two reads and two writes, and the two
accesses that share a block always use different ports.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numba
import numpy as np

from .fxp import DEFAULT_SPEC, FixedSpec, quantize_array

log = logging.getLogger(__name__)

N_DEFAULT = 255
TAPS_255 = (250, 252, 253)
# Three-tap feedback tables for 2^k - 1 bit vectors (register 1 is the head).
KNOWN_TAPS = {255: TAPS_255}
N_BANKS = 3


class ConfigError(ValueError):
    pass


class BankConflictError(AssertionError):
    pass


# -- classical LFSR ----------------------------------------------------------

def lfsr_step(state, taps):
    """One Galois shift with a fixed head at register 1.

    ``state[i]`` is register ``i + 1``.  Every register takes its right
    neighbour (the last one takes the head); tap registers additionally XOR
    in the head.
    """
    state = np.asarray(state, dtype=np.uint8)
    head = state[0]
    nxt = np.roll(state, -1)
    for t in taps:
        nxt[t - 1] ^= head
    return nxt


class LfsrPcGenerator:
    """Shift register plus full-width parallel counter."""

    def __init__(self, bits, taps=TAPS_255):
        self.state = np.array(bits, dtype=np.uint8)
        self.taps = tuple(taps)
        if not self.state.any():
            raise ValueError("all-zero seed is an absorbing state")

    def step(self) -> int:
        self.state = lfsr_step(self.state, self.taps)
        return int(self.state.sum())

    def generate(self, count: int) -> np.ndarray:
        return np.array([self.step() for _ in range(count)], dtype=np.int64)


# -- flat reference ----------------------------------------------------------

def combined_offsets(taps, n=N_DEFAULT):
    """Offsets touched by two merged single-bit updates.

    Returns ``(by_h0, by_h1)``: offsets XORed with ``x(h)`` and with
    ``x(h+1)`` respectively.  An offset in both sets takes both heads.
    """
    taps = tuple(sorted(taps))
    if min(taps) <= 1 or max(taps) >= n - 1:
        raise ConfigError(f"taps {taps} must lie in [2, n-2] for n={n}")
    return taps, tuple(t + 1 for t in taps)


@dataclass
class SeedVector:
    bits: np.ndarray
    head: int = 0
    taps: tuple = TAPS_255

    @property
    def n(self):
        return len(self.bits)

    def popcount(self) -> int:
        return int(self.bits.sum())

    def copy(self):
        return SeedVector(self.bits.copy(), self.head, self.taps)


def rlf_flat_step(s: SeedVector) -> SeedVector:
    """Combined two-head update on the flat vector; returns a new vector."""
    n, h = s.n, s.head
    by_h0, by_h1 = combined_offsets(s.taps, n)
    x = s.bits
    out = x.copy()
    h0, h1 = x[h], x[(h + 1) % n]
    for t in by_h0:
        out[(h + t) % n] ^= h0
    for t in by_h1:
        out[(h + t) % n] ^= h1
    return SeedVector(out, (h + 2) % n, s.taps)


@numba.njit(cache=True)
def fingerprint_flat(bits, h):
    """Same probe as the banked engine, computed on flat (n, m) vectors."""
    n, m = bits.shape
    res = np.empty(m, dtype=np.uint64)
    for j in range(m):
        acc = np.uint64(1469598103934665603)
        for p in range(n):
            acc = (acc ^ np.uint64(bits[p, j] + 2 * (p & 1))) * np.uint64(1099511628211)
        res[j] = acc
    return res


@numba.njit(cache=True)
def _flat_run(bits, head, steps, by_h0, by_h1, sums, fingerprints):
    # bits: (n, m) uint8 flat vectors; sums: (steps, m) full popcounts
    n, m = bits.shape
    h = head
    for k in range(steps):
        for j in range(m):
            a = bits[h, j]
            b = bits[(h + 1) % n, j]
            for t in by_h0:
                bits[(h + t) % n, j] ^= a
            for t in by_h1:
                bits[(h + t) % n, j] ^= b
            c = 0
            for i in range(n):
                c += bits[i, j]
            sums[k, j] = c
        h = (h + 2) % n
        if fingerprints.shape[0] > 0:
            fingerprints[k] = fingerprint_flat(bits, h)
    return h


def flat_run(bits, head, steps, taps=TAPS_255, fingerprints=False):
    """Run the reference update for ``steps`` cycles on lane columns.

    Popcounts are recomputed from scratch each cycle.  ``bits`` must be a
    C-contiguous uint8 (n, m) array and is updated in place.  Returns
    ``(sums, head, fingerprints)``.
    """
    if bits.dtype != np.uint8 or not bits.flags.c_contiguous:
        raise TypeError("bits must be a C-contiguous uint8 array")
    by_h0, by_h1 = combined_offsets(taps, bits.shape[0])
    sums = np.empty((steps, bits.shape[1]), dtype=np.int32)
    fp = np.empty((steps if fingerprints else 0, bits.shape[1]), dtype=np.uint64)
    h = _flat_run(bits, head, steps, np.array(by_h0, np.int64), np.array(by_h1, np.int64), sums, fp)
    return sums, h, fp


# -- seeding -----------------------------------------------------------------

def seed_lanes(m: int, seed: int, n: int = N_DEFAULT) -> np.ndarray:
    """Draw an (n, m) bit matrix from a counter-based generator; no zero lanes."""
    rng = np.random.Generator(np.random.Philox(seed))
    bits = rng.integers(0, 2, size=(n, m), dtype=np.uint8)
    while True:
        dead = ~bits.any(axis=0)
        if not dead.any():
            return bits
        bits[:, dead] = rng.integers(0, 2, size=(n, int(dead.sum())), dtype=np.uint8)


# -- banked engine -----------------------------------------------------------

@numba.njit(cache=True)
def _banked_run(banks, buf, result, tapreg, head, n, tap0, mask0, mask1,
                steps, out, fingerprints, access):
    # Returns the new head, or -1 - k on a bank conflict at cycle k.
    W = mask0.shape[0]
    m = result.shape[0]
    h = head
    for k in range(steps):
        pw0 = (h + tap0) % n
        pw1 = (h + tap0 + 1) % n
        pr0 = (h + 2) % n
        pr1 = (h + 3) % n
        bw0 = pw0 % 3
        bw1 = pw1 % 3
        br0 = pr0 % 3
        br1 = pr1 % 3
        # one read port and one write port per block
        if br0 == br1 or bw0 == bw1:
            return -1 - k
        if access.shape[0] > 0:
            access[k, 0] = br0
            access[k, 1] = br1
            access[k, 2] = bw0
            access[k, 3] = bw1
        for j in range(m):
            h0 = buf[W, j]
            h1 = buf[W + 1, j]
            s_old = 0
            s_new = 0
            for i in range(W):
                t = buf[i, j]
                s_old += t
                t = t ^ (mask0[i] & h0) ^ (mask1[i] & h1)
                buf[i, j] = t
                s_new += t
            tapreg[j] = s_old
            result[j] += s_new - s_old
            banks[bw0, pw0 // 3, j] = buf[0, j]
            banks[bw1, pw1 // 3, j] = buf[1, j]
            for i in range(W - 2):
                buf[i, j] = buf[i + 2, j]
            buf[W - 2, j] = h0
            buf[W - 1, j] = h1
            buf[W, j] = banks[br0, pr0 // 3, j]
            buf[W + 1, j] = banks[br1, pr1 // 3, j]
            if out.shape[0] > 0:
                out[k, j] = result[j]
        h = (h + 2) % n
        if fingerprints.shape[0] > 0:
            # logical-vector probe: RAM overlaid with the buffer contents
            for j in range(m):
                acc = np.uint64(1469598103934665603)
                for p in range(n):
                    off = (p - h) % n
                    if off >= tap0:
                        v = buf[off - tap0, j]
                    elif off < 2:
                        v = buf[W + off, j]
                    else:
                        v = banks[p % 3, p // 3, j]
                    acc = (acc ^ np.uint64(v + 2 * (p & 1))) * np.uint64(1099511628211)
                fingerprints[k, j] = acc
    return h


class RlfEngine:
    """Banked seed memory with ``m`` lanes driven by one shared indexer."""

    def __init__(self, bits, head: int = 0, taps=TAPS_255):
        bits = np.asarray(bits, dtype=np.uint8)
        if bits.ndim == 1:
            bits = bits[:, None]
        n, m = bits.shape
        if n % N_BANKS:
            raise ConfigError(f"seed length {n} must split evenly over {N_BANKS} blocks")
        if n <= 18:
            log.warning("n=%d violates the binomial-to-normal size condition (n > 18)", n)
        if not bits.any(axis=0).all():
            raise ValueError("all-zero lane: absorbing state")
        by_h0, by_h1 = combined_offsets(taps, n)
        tap0 = min(by_h0)
        if max(by_h1) != n - 1:
            raise ConfigError("tap window must end at offset n-1 for the shifting buffer")
        W = n - tap0
        self.n, self.m, self.taps, self.tap0, self.width = n, m, tuple(taps), tap0, W
        self.mask0 = np.array([1 if tap0 + i in by_h0 else 0 for i in range(W)], np.uint8)
        self.mask1 = np.array([1 if tap0 + i in by_h1 else 0 for i in range(W)], np.uint8)

        self.banks = np.zeros((N_BANKS, n // N_BANKS, m), dtype=np.uint8)
        for p in range(n):
            self.banks[p % 3, p // 3] = bits[p]
        self.head = head % n
        h = self.head
        self.buf = np.empty((W + 2, m), dtype=np.uint8)
        for i in range(W):
            self.buf[i] = bits[(h + tap0 + i) % n]
        self.buf[W] = bits[h]
        self.buf[W + 1] = bits[(h + 1) % n]
        # initial result is the precomputed seed popcount
        self.result = bits.sum(axis=0, dtype=np.int32)
        self.tapreg = self.buf[:W].sum(axis=0, dtype=np.int32)
        self.cycles = 0

    @classmethod
    def seeded(cls, m: int, seed: int, n: int = N_DEFAULT, taps=None):
        taps = taps or KNOWN_TAPS.get(n)
        if taps is None:
            raise ConfigError(f"no tap table entry for n={n}")
        return cls(seed_lanes(m, seed, n), taps=taps)

    @property
    def indexer(self):
        """(block, pos) of the head: block = h mod 3, pos = h div 3."""
        return self.head % 3, self.head // 3

    def run(self, steps: int, record=True, fingerprints=False, access_log=False):
        """Advance ``steps`` cycles; returns per-cycle result registers (steps, m)."""
        out = np.empty((steps if record else 0, self.m), dtype=np.int16)
        fp = np.empty((steps if fingerprints else 0, self.m), dtype=np.uint64)
        acc = np.empty((steps if access_log else 0, 4), dtype=np.int8)
        h = _banked_run(self.banks, self.buf, self.result, self.tapreg, self.head, self.n,
                        self.tap0, self.mask0, self.mask1, steps, out, fp, acc)
        if h < 0:
            raise BankConflictError(f"two accesses on one block port at cycle {self.cycles - h - 1}")
        self.head = h
        self.cycles += steps
        self.last_fingerprints = fp if fingerprints else None
        self.last_access = acc if access_log else None
        return out

    def step(self) -> np.ndarray:
        """One cycle; returns the result register of every lane."""
        return self.run(1)[0].astype(np.int64)

    def output(self) -> np.ndarray:
        return self.result.astype(np.int64)

    def access_pattern(self):
        """Planned RAM accesses for the next cycle as (kind, bank, slot) tuples."""
        n, h = self.n, self.head
        plan = [("read", (h + 2) % n), ("read", (h + 3) % n),
                ("write", (h + self.tap0) % n), ("write", (h + self.tap0 + 1) % n)]
        return [(kind, p % 3, p // 3) for kind, p in plan]

    def logical_bits(self) -> np.ndarray:
        """Flat (n, m) view: RAM contents overlaid with the buffer register."""
        n, h, W = self.n, self.head, self.width
        bits = np.empty((n, self.m), dtype=np.uint8)
        for p in range(n):
            bits[p] = self.banks[p % 3, p // 3]
        for i in range(W):
            bits[(h + self.tap0 + i) % n] = self.buf[i]
        bits[h] = self.buf[W]
        bits[(h + 1) % n] = self.buf[W + 1]
        return bits

    def dump_state(self) -> str:
        """Hex dump of banks, buffer and registers, one field per line."""
        lines = [f"n {self.n} m {self.m} head {self.head} cycles {self.cycles}"]
        for b in range(N_BANKS):
            packed = np.packbits(self.banks[b], axis=1)
            for slot in range(self.banks.shape[1]):
                lines.append(f"bank{b}[{slot:03d}] {packed[slot].tobytes().hex()}")
        packed = np.packbits(self.buf, axis=1)
        for i in range(self.buf.shape[0]):
            lines.append(f"buf[{i}] {packed[i].tobytes().hex()}")
        lines.append("tap_reg " + " ".join(f"{v:02x}" for v in self.tapreg))
        lines.append("result_reg " + " ".join(f"{v:02x}" for v in self.result))
        return "\n".join(lines) + "\n"


# -- parallel array ----------------------------------------------------------

def selector_order(m: int, cycle: int) -> np.ndarray:
    """Lane index carried by each output slot under the group-of-4 rotation."""
    if m % 4:
        raise ConfigError(f"lane count {m} is not a multiple of 4")
    slots = np.arange(m)
    group, j = slots // 4, slots % 4
    return group * 4 + (j + cycle) % 4


def standardize(sums, n: int = N_DEFAULT):
    """Map popcounts onto unit-Gaussian scale: (sum - n/2) / sqrt(n/4)."""
    if n <= 18:
        log.warning("n=%d violates the binomial-to-normal size condition (n > 18)", n)
    return (np.asarray(sums, dtype=np.float64) - n / 2.0) / np.sqrt(n / 4.0)


def encode8(z, spec: FixedSpec = DEFAULT_SPEC):
    """Standardized samples onto the fixed-point grid (saturating)."""
    raw, _ = quantize_array(z, spec)
    return raw


class RlfArray:
    """``m``-lane generator whose outputs pass through the rotating selector."""

    def __init__(self, m: int, seed: int, n: int = N_DEFAULT):
        if m % 4:
            raise ConfigError(f"lane count {m} is not a multiple of 4")
        self.engine = RlfEngine.seeded(m, seed, n)
        self.m, self.n = m, n
        self._orders = np.stack([selector_order(m, c) for c in range(4)])

    def parallel_step(self) -> np.ndarray:
        c = self.engine.cycles
        res = self.engine.step()
        return standardize(res[selector_order(self.m, c)], self.n)

    def raw_sums(self, cycles: int) -> np.ndarray:
        """Selector-ordered popcounts, (cycles, m)."""
        c0 = self.engine.cycles
        res = self.engine.run(cycles)
        order = self._orders[(c0 + np.arange(cycles)) % 4]
        return np.take_along_axis(res, order, axis=1)

    def generate(self, count: int, raw=False) -> np.ndarray:
        """Flattened cycle-major output stream of ``count`` samples."""
        cycles = -(-count // self.m)
        sums = self.raw_sums(cycles).ravel()[:count].astype(np.int64)
        return sums if raw else standardize(sums, self.n)


# -- uniform source ------------------------------------------------------------

_LFSR64_MASK = np.uint64(0xD800000000000000)  # x^64 + x^63 + x^61 + x^60 + 1


@numba.njit(cache=True)
def _lfsr64_words(state, count, out):
    one = np.uint64(1)
    s = np.uint64(state)
    for i in range(count):
        w = np.uint64(0)
        for _ in range(32):
            bit = s & one
            s = s >> one
            if bit == one:
                s = s ^ _LFSR64_MASK
            w = (w << one) | bit
        out[i] = w
    return s


class LfsrUniform:
    """Uniform words from a 64-bit Galois shift register, 32 bits per word."""

    def __init__(self, seed: int):
        s = (int(seed) * 0x9E3779B97F4A7C15 + 0x632BE59BD9B4E019) & ((1 << 64) - 1)
        self.state = np.uint64(s or 1)

    def words(self, count: int) -> np.ndarray:
        out = np.empty(count, dtype=np.uint64)
        self.state = np.uint64(_lfsr64_words(self.state, count, out))
        return out

    def random(self, count: int) -> np.ndarray:
        return (self.words(count).astype(np.float64) + 0.5) / 2.0 ** 32

    def permutation(self, k: int) -> np.ndarray:
        """Fisher-Yates shuffle of range(k) driven by the word stream."""
        perm = np.arange(k)
        _shuffle(perm, self.words(k))
        return perm


@numba.njit(cache=True)
def _shuffle(perm, words):
    for i in range(perm.shape[0] - 1, 0, -1):
        j = np.int64((words[i] * np.uint64(i + 1)) >> np.uint64(32))
        t = perm[i]
        perm[i] = perm[j]
        perm[j] = t
