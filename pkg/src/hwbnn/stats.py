"""Distribution checks for Gaussian streams: stability, runs test, binomial fit."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats as sps


@dataclass(frozen=True)
class StabilityReport:
    mu_error: float
    sigma_error: float
    sample_count: int

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class RunsTestResult:
    runs: int
    n_above: int
    n_below: int
    z_stat: float
    passed: bool
    alpha: float
    diagnostic: str = ""

    def to_dict(self):
        return asdict(self)


def stability(samples) -> StabilityReport:
    """Absolute errors of sample mean and (unbiased) stddev against N(0, 1)."""
    x = np.asarray(samples, dtype=np.float64)
    if x.size < 2:
        raise ValueError("stability needs at least 2 samples")
    return StabilityReport(abs(float(x.mean())), abs(float(x.std(ddof=1)) - 1.0), int(x.size))


def critical_value(alpha: float) -> float:
    return float(sps.norm.ppf(1.0 - alpha / 2.0))


def runs_test(samples, alpha: float = 0.05) -> RunsTestResult:
    """Wald-Wolfowitz runs test about the sample median.

    Values equal to the median are dropped before counting runs.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.size < 50:
        raise ValueError("runs test needs at least 50 samples")
    if not 0 < alpha < 0.5:
        raise ValueError("alpha must lie in (0, 0.5)")
    med = np.median(x)
    x = x[x != med]
    above = x > med
    n1 = int(above.sum())
    n2 = int(above.size - n1)
    if n1 == 0 or n2 == 0:
        return RunsTestResult(int(above.size > 0), n1, n2, float("inf"), False, alpha,
                              "degenerate sequence: one side of the median is empty")
    runs = 1 + int(np.count_nonzero(above[1:] != above[:-1]))
    a, b = float(n1), float(n2)
    mean = 2.0 * a * b / (a + b) + 1.0
    var = 2.0 * a * b * (2.0 * a * b - a - b) / ((a + b) ** 2 * (a + b - 1.0))
    z = (runs - mean) / np.sqrt(var)
    return RunsTestResult(runs, n1, n2, float(z), bool(abs(z) < critical_value(alpha)), alpha)


def trial_seeds(master_seed: int, trials: int) -> list[int]:
    """Independent per-trial seeds; the list depends only on the master seed."""
    ss = np.random.SeedSequence(master_seed)
    return [int(c.generate_state(1, np.uint64)[0] >> np.uint64(1)) for c in ss.spawn(trials)]


def pass_rate(generator, trials: int, samples_per_trial: int, alpha: float = 0.05,
              master_seed: int = 0) -> float:
    """Fraction of runs tests passed; ``generator(count, seed)`` returns a stream."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    passed = 0
    for seed in trial_seeds(master_seed, trials):
        passed += runs_test(generator(samples_per_trial, seed), alpha).passed
    return passed / trials


def binomial_gof(raw_sums, n: int, p: float = 0.5, min_expected: float = 5.0) -> float:
    """Chi-square p-value of the observed sum histogram against B(n, p).

    Adjacent bins are pooled from both tails inward until each pooled bin
    expects at least ``min_expected`` counts.
    """
    k = np.asarray(raw_sums, dtype=np.int64)
    if k.size == 0 or k.min() < 0 or k.max() > n:
        raise ValueError(f"sums must lie in [0, {n}]")
    observed = np.bincount(k, minlength=n + 1).astype(np.float64)
    expected = sps.binom.pmf(np.arange(n + 1), n, p) * k.size

    obs_bins, exp_bins = [], []
    o_acc = e_acc = 0.0
    for o, e in zip(observed, expected):
        o_acc += o
        e_acc += e
        if e_acc >= min_expected:
            obs_bins.append(o_acc)
            exp_bins.append(e_acc)
            o_acc = e_acc = 0.0
    if e_acc > 0 or o_acc > 0:
        if not exp_bins:
            raise ValueError("not enough samples to form pooled bins")
        obs_bins[-1] += o_acc
        exp_bins[-1] += e_acc
    if len(exp_bins) < 5:
        raise ValueError(f"only {len(exp_bins)} pooled bins with expected count >= {min_expected}")
    obs = np.asarray(obs_bins)
    exp = np.asarray(exp_bins)
    chi2 = float(((obs - exp) ** 2 / exp).sum())
    return float(sps.chi2.sf(chi2, len(exp) - 1))
