import logging

import numpy as np
import pytest

from hwbnn.rlf import (N_DEFAULT, BankConflictError, ConfigError, LfsrPcGenerator, LfsrUniform,
                       RlfArray, RlfEngine, SeedVector, encode8, flat_run, lfsr_step,
                       rlf_flat_step, seed_lanes, selector_order, standardize)


def naive_lfsr(regs, taps):
    # regs[0] is register 1 (the head)
    n = len(regs)
    head = regs[0]
    out = [regs[(i + 1) % n] for i in range(n)]
    for t in taps:
        out[t - 1] ^= head
    return out


def single_rlf_update(bits, h, taps):
    bits = bits.copy()
    for t in taps:
        bits[(h + t) % len(bits)] ^= bits[h]
    return bits, (h + 1) % len(bits)


class TestLfsr:
    def test_zero_absorbing(self):
        z = np.zeros(8, np.uint8)
        assert not lfsr_step(z, (4, 5, 6)).any()

    def test_single_step_trace(self):
        s = np.array([1, 0, 0, 0, 0, 0, 0, 0], np.uint8)
        assert lfsr_step(s, (4, 5, 6)).tolist() == naive_lfsr(s.tolist(), (4, 5, 6))
        assert lfsr_step(s, (4, 5, 6)).tolist() == [0, 0, 0, 1, 1, 1, 0, 1]

    @pytest.mark.parametrize("seed", [1, 0x5A, 0xFF, 0x80])
    def test_period_255(self, seed):
        s0 = np.array([(seed >> i) & 1 for i in range(8)], np.uint8)
        s = s0.copy()
        for k in range(1, 256):
            s = lfsr_step(s, (4, 5, 6))
            if np.array_equal(s, s0):
                break
        assert k == 255

    def test_pc_baseline_matches_flat(self):
        bits = seed_lanes(1, 3)[:, 0]
        g = LfsrPcGenerator(bits)
        sums = g.generate(40)
        v = SeedVector(bits.copy())
        for k in range(20):
            v = rlf_flat_step(v)
            assert v.popcount() == sums[2 * k + 1]


class TestFlat:
    def test_zero(self):
        v = rlf_flat_step(SeedVector(np.zeros(255, np.uint8), 7))
        assert not v.bits.any() and v.head == 9

    @pytest.mark.parametrize("h", [0, 5, 200, 254])
    def test_single_bit(self, h):
        bits = np.zeros(255, np.uint8)
        bits[h] = 1
        v = rlf_flat_step(SeedVector(bits, h))
        assert set(np.flatnonzero(v.bits)) == {h, (h + 250) % 255, (h + 252) % 255, (h + 253) % 255}

    def test_equals_two_single_updates(self):
        rng = np.random.default_rng(1)
        bits = rng.integers(0, 2, 255).astype(np.uint8)
        v = SeedVector(bits.copy(), 17)
        b, h = single_rlf_update(bits, 17, (250, 252, 253))
        b, h = single_rlf_update(b, h, (250, 252, 253))
        w = rlf_flat_step(v)
        assert np.array_equal(w.bits, b) and w.head == h

    def test_pseudo_shift_matches_shift_register(self):
        bits = seed_lanes(1, 11)[:, 0]
        v = SeedVector(bits.copy())
        reg = bits.copy()
        for _ in range(300):
            v = rlf_flat_step(v)
            reg = lfsr_step(lfsr_step(reg, (250, 252, 253)), (250, 252, 253))
            assert np.array_equal(np.roll(v.bits, -v.head), reg)

    def test_bounded_difference(self):
        sums, _, _ = flat_run(np.ascontiguousarray(seed_lanes(4, 2)), 0, 5000)
        assert np.abs(np.diff(sums, axis=0)).max() <= 5


class TestBanked:
    def test_oracle_equivalence(self):
        bits = seed_lanes(10, 123)
        eng = RlfEngine(bits)
        ref = np.ascontiguousarray(bits.copy())
        out = eng.run(100_000, fingerprints=True)
        sums, h, fp = flat_run(ref, 0, 100_000, fingerprints=True)
        assert np.array_equal(out, sums)
        assert np.array_equal(eng.last_fingerprints, fp)
        assert eng.head == h
        assert np.array_equal(eng.logical_bits(), ref)

    def test_result_is_popcount_every_step(self):
        eng = RlfEngine(seed_lanes(3, 5))
        for _ in range(200):
            eng.step()
            assert np.array_equal(eng.output(), eng.logical_bits().sum(axis=0))

    def test_initial_result(self):
        bits = seed_lanes(8, 9)
        assert np.array_equal(RlfEngine(bits).output(), bits.sum(axis=0))

    def test_all_ones_first_step(self):
        eng = RlfEngine(np.ones(255, np.uint8))
        # 250, 251, 252, 254 take one head and clear; 253 takes both and stays set
        taps_new = 1
        assert eng.step()[0] == 255 + (taps_new - 5) == 251
        assert eng.output()[0] == eng.logical_bits().sum()

    def test_zero_lane_rejected(self):
        bits = seed_lanes(4, 1)
        bits[:, 2] = 0
        with pytest.raises(ValueError):
            RlfEngine(bits)

    def test_access_pattern(self):
        eng = RlfEngine(seed_lanes(2, 4))
        eng.run(3000, record=False, access_log=True)
        acc = eng.last_access
        assert (acc[:, 0] != acc[:, 1]).all()
        assert (acc[:, 2] != acc[:, 3]).all()
        # per block: at most one read and one write, i.e. <= 2 accesses (2-port RAM)
        for row in acc:
            assert np.bincount(row, minlength=3).max() <= 2
        plan = RlfEngine(seed_lanes(1, 4)).access_pattern()
        assert [k for k, _, _ in plan] == ["read", "read", "write", "write"]

    def test_shared_indexer(self):
        eng = RlfEngine(seed_lanes(8, 4))
        eng.run(7)
        assert eng.indexer == (14 % 3, 14 // 3)

    def test_conflict_is_detected(self):
        # a seed length not a multiple of 3 cannot be banked at all
        with pytest.raises(ConfigError):
            RlfEngine(np.ones(127, np.uint8), taps=(122, 124, 125))
        assert issubclass(BankConflictError, AssertionError)

    def test_dump_state(self):
        a = RlfEngine(seed_lanes(8, 2))
        b = RlfEngine(seed_lanes(8, 2))
        a.run(10)
        b.run(10)
        assert a.dump_state() == b.dump_state()
        assert "result_reg" in a.dump_state()


class TestStandardize:
    def test_values(self):
        assert standardize(127, 255) == pytest.approx(-0.0626224, abs=1e-6)
        assert standardize(255, 255) == pytest.approx(15.9687194, abs=1e-6)
        assert standardize(50, 100) == 0.0

    def test_small_n_warns(self, caplog):
        with caplog.at_level(logging.WARNING):
            standardize(5, 10)
        assert "size condition" in caplog.text

    def test_encode8(self):
        assert encode8(np.array([0.0, 7.98, -0.0626])).tolist() == [0, 127, -2]


class TestArray:
    def test_selector_rotation(self):
        for c in range(4):
            assert selector_order(4, c).tolist() == [(j + c) % 4 for j in range(4)]
        assert selector_order(8, 1).tolist() == [1, 2, 3, 0, 5, 6, 7, 4]

    def test_lane_count(self):
        with pytest.raises(ConfigError):
            RlfArray(6, 0)

    def test_lanes_match_standalone(self):
        arr = RlfArray(64, 77)
        sums = arr.raw_sums(10_000)
        bits = seed_lanes(64, 77)
        # undo the selector: slot j at cycle c carries lane order[c][j]
        for lane in (0, 5, 63):
            ref = RlfEngine(bits[:, lane]).run(10_000)[:, 0]
            got = np.array([sums[c, np.flatnonzero(selector_order(64, c) == lane)[0]]
                            for c in range(10_000)])
            assert np.array_equal(got, ref)

    def test_generate_deterministic(self):
        assert np.array_equal(RlfArray(8, 3).generate(1000), RlfArray(8, 3).generate(1000))
        assert RlfArray(8, 3).generate(100, raw=True).dtype == np.int64

    def test_parallel_step(self):
        arr = RlfArray(8, 1)
        z = arr.parallel_step()
        assert z.shape == (8,) and arr.engine.cycles == 1


class TestUniform:
    def test_permutation(self):
        p = LfsrUniform(5).permutation(1000)
        assert sorted(p.tolist()) == list(range(1000))

    def test_uniform_moments(self):
        u = LfsrUniform(2).random(100_000)
        assert 0 < u.min() and u.max() < 1
        assert abs(u.mean() - 0.5) < 0.01

    def test_deterministic(self):
        assert np.array_equal(LfsrUniform(9).words(50), LfsrUniform(9).words(50))
