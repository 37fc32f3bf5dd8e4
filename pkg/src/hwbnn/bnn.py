"""Variational BNN inference engine.

Weights are sampled as ``w = mu + eps * sigma`` for every weight, every image
and every Monte Carlo sample.  The float path is the reference; the quantized
path runs the same network on integer raws of a :class:`FixedSpec` with a
wide accumulator per neuron, so it models the PE datapath bit-exactly.

Weight matrices are stored (fan_in, fan_out) so a layer is ``x @ W + b``.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np

from .fxp import (DEFAULT_SPEC, FixedSpec, add_raw, mul_raw, quantize_array,
                  saturate, shift_round_even, spec_for_bits)
from .grng import make_source

MC_DEFAULT = 8
# Pipeline fill: GRNG->updater DFF, updater register, 3-stage PE.
FILL_CYCLES = 5
IMAGE_BLOCK = 50


@dataclass(frozen=True)
class NetworkTopology:
    layer_sizes: tuple

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2:
            raise ValueError("topology needs at least an input and an output layer")
        if min(sizes) < 1:
            raise ValueError(f"layer sizes must be >= 1, got {sizes}")
        object.__setattr__(self, "layer_sizes", sizes)

    @classmethod
    def parse(cls, text: str) -> "NetworkTopology":
        return cls(tuple(int(t) for t in text.split(",") if t.strip()))

    @property
    def shapes(self):
        return list(zip(self.layer_sizes[:-1], self.layer_sizes[1:]))

    @property
    def min_fan_in(self) -> int:
        return min(self.layer_sizes[:-1])

    @property
    def n_weights(self) -> int:
        return sum(i * o + o for i, o in self.shapes)

    def __str__(self):
        return ",".join(map(str, self.layer_sizes))


def sigma_from_rho(rho):
    """Softplus, computed stably for large |rho|."""
    rho = np.asarray(rho, dtype=np.float64)
    return np.logaddexp(0.0, rho)


@dataclass
class VariationalParams:
    mu_w: list
    rho_w: list
    mu_b: list
    rho_b: list

    def __post_init__(self):
        n = len(self.mu_w)
        if not (len(self.rho_w) == len(self.mu_b) == len(self.rho_b) == n) or n == 0:
            raise ValueError("parameter lists must have one entry per layer")
        for k in range(n):
            if self.mu_w[k].shape != self.rho_w[k].shape:
                raise ValueError(f"layer {k}: mu/rho weight shapes differ")
            out = self.mu_w[k].shape[1]
            if self.mu_b[k].shape != (out,) or self.rho_b[k].shape != (out,):
                raise ValueError(f"layer {k}: bias shape must be ({out},)")
            if k and self.mu_w[k].shape[0] != self.mu_w[k - 1].shape[1]:
                raise ValueError(f"layer {k}: fan-in does not match previous layer")

    @property
    def topology(self) -> NetworkTopology:
        return NetworkTopology((self.mu_w[0].shape[0],) + tuple(w.shape[1] for w in self.mu_w))

    @property
    def sigma_w(self):
        return [sigma_from_rho(r) for r in self.rho_w]

    @property
    def sigma_b(self):
        return [sigma_from_rho(r) for r in self.rho_b]

    @classmethod
    def init(cls, topo: NetworkTopology, seed: int = 0, rho0: float = -5.0):
        rng = np.random.default_rng(seed)
        mu_w, rho_w, mu_b, rho_b = [], [], [], []
        for i, o in topo.shapes:
            mu_w.append(rng.normal(0.0, np.sqrt(2.0 / i), size=(i, o)))
            rho_w.append(np.full((i, o), float(rho0)))
            mu_b.append(np.zeros(o))
            rho_b.append(np.full(o, float(rho0)))
        return cls(mu_w, rho_w, mu_b, rho_b)

    def copy(self):
        return VariationalParams(*[[a.copy() for a in t] for t in
                                   (self.mu_w, self.rho_w, self.mu_b, self.rho_b)])


@dataclass
class QuantizedParams:
    mu_w: list
    sigma_w: list
    mu_b: list
    sigma_b: list
    spec: FixedSpec = DEFAULT_SPEC
    max_error: dict = field(default_factory=dict)

    @classmethod
    def from_params(cls, params: VariationalParams, spec: FixedSpec = DEFAULT_SPEC):
        """Sigma is taken through softplus in float, then everything is quantized."""
        out, err = {}, {}
        float_t = {"mu_w": params.mu_w, "sigma_w": params.sigma_w,
                   "mu_b": params.mu_b, "sigma_b": params.sigma_b}
        for name, tensors in float_t.items():
            out[name] = []
            for k, t in enumerate(tensors):
                raw, _ = quantize_array(t, spec)
                out[name].append(raw)
                err[f"{name}[{k}]"] = float(np.max(np.abs(raw * spec.step - t), initial=0.0))
        return cls(spec=spec, max_error=err, **out)

    @property
    def topology(self) -> NetworkTopology:
        return NetworkTopology((self.mu_w[0].shape[0],) + tuple(w.shape[1] for w in self.mu_w))

    def dequantize(self):
        s = self.spec.step
        return {k: [t * s for t in getattr(self, k)] for k in ("mu_w", "sigma_w", "mu_b", "sigma_b")}


def sample_weights(mu, sigma, eps):
    mu, sigma, eps = (np.asarray(a, dtype=np.float64) for a in (mu, sigma, eps))
    if mu.ndim and eps.shape[eps.ndim - mu.ndim:] != mu.shape:
        raise ValueError(f"eps shape {eps.shape} does not end in {mu.shape}")
    return mu + eps * sigma


def sample_weights_q(mu_q, sigma_q, eps_q, spec: FixedSpec = DEFAULT_SPEC):
    """Weight updater on raws: saturating multiply, then saturating add."""
    prod, _ = mul_raw(eps_q, sigma_q, spec)
    w, _ = add_raw(mu_q, prod, spec)
    return w


@numba.njit(cache=True)
def _updater_kernel(mu, sig, eps, out, frac, lo, hi):
    # fused mul_raw + add_raw over flat int64 arrays, mu/sig broadcast
    k = mu.size
    half = (1 << (frac - 1)) if frac > 0 else 0
    for j in range(out.size):
        p = eps[j] * sig[j % k]
        if frac > 0:
            q = p >> frac
            rem = p - (q << frac)
            if rem > half or (rem == half and (q & 1) == 1):
                q += 1
            p = q
        p = min(max(p, lo), hi)
        w = mu[j % k] + p
        out[j] = min(max(w, lo), hi)


def updater_fast(mu_q, sigma_q, eps_q, spec: FixedSpec = DEFAULT_SPEC):
    """Same result as :func:`sample_weights_q` for eps of shape (..., *mu.shape)."""
    mu = np.ascontiguousarray(mu_q, dtype=np.int64).ravel()
    sig = np.ascontiguousarray(sigma_q, dtype=np.int64).ravel()
    eps = np.ascontiguousarray(eps_q, dtype=np.int64)
    out = np.empty(eps.shape, dtype=np.int64)
    _updater_kernel(mu, sig, eps.ravel(), out.ravel(), spec.frac_bits, spec.raw_min, spec.raw_max)
    return out


@dataclass(frozen=True)
class PEConfig:
    T: int = 16
    S: int = 8
    N: int = 8
    B: int = 8
    MaxWS: int = 512
    M: int | None = None

    def __post_init__(self):
        for name in ("T", "S", "N", "B", "MaxWS"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.M is not None and self.M <= 0:
            raise ValueError(f"M must be positive, got {self.M}")

    @property
    def pes(self) -> int:
        return self.T * self.S if self.M is None else self.M


@dataclass(frozen=True)
class Diagnostic:
    name: str
    expression: str
    holds: bool
    severity: str  # "pass", "warning" or "error"

    def to_dict(self):
        return {"name": self.name, "expression": self.expression,
                "holds": self.holds, "severity": self.severity}


def validate_config(cfg: PEConfig, topo: NetworkTopology) -> list[Diagnostic]:
    """Evaluate the PE/memory sizing inequalities.

    The PE-count bound is only a warning: commonly used configurations violate it.
    """
    min_in = topo.min_fan_in
    bound = math.ceil(min_in / cfg.N)
    ts = cfg.T * cfg.S
    word = cfg.B * cfg.N * cfg.S
    checks = [
        ("pe_count", f"T*S < ceil(MinIn/N): {ts} < {bound}", ts < bound, "warning"),
        ("word_size", f"B*N*S <= MaxWS: {word} <= {cfg.MaxWS}", word <= cfg.MaxWS, "error"),
        ("square_pe", f"S == N: {cfg.S} == {cfg.N}", cfg.S == cfg.N, "error"),
        ("pe_total", f"M == T*S: {cfg.pes} == {ts}", cfg.pes == ts, "error"),
    ]
    return [Diagnostic(n, e, ok, "pass" if ok else sev) for n, e, ok, sev in checks]


def cycle_estimate(cfg: PEConfig, topo: NetworkTopology, clock_mhz: float = 200.0):
    """Cycles per image for the time-multiplexed PE array (informational)."""
    m = cfg.pes
    per_layer = [math.ceil(o / m) * math.ceil(i / cfg.N) for i, o in topo.shapes]
    cycles = sum(per_layer) + FILL_CYCLES
    return {"layer_cycles": per_layer, "fill_cycles": FILL_CYCLES, "cycles": cycles,
            "clock_mhz": clock_mhz, "images_per_s": clock_mhz * 1e6 / cycles}


# -- PE datapath --------------------------------------------------------------

def _exact_float(spec: FixedSpec, fan_in: int) -> bool:
    # products of two raws summed over fan_in stay exact in a double
    return 2 * (spec.total_bits - 1) + math.ceil(math.log2(fan_in + 1)) + 1 < 53


def _wide_dot(x, w, spec: FixedSpec):
    """Exact integer x @ w with batched weights allowed; x (..., i), w (..., i, o)."""
    if _exact_float(spec, x.shape[-1]):
        acc = np.matmul(x.astype(np.float64)[..., None, :], w.astype(np.float64))[..., 0, :]
        return acc.astype(np.int64)
    xo = x.astype(object)
    wo = w.astype(object)
    return np.matmul(xo[..., None, :], wo)[..., 0, :]


def pe_forward(inputs, weights, bias, cfg: PEConfig | None = None, relu: bool = True,
               spec: FixedSpec | None = None, saturate_out: bool = True):
    """One fully connected layer as the PE array computes it.

    ``weights`` is (fan_in, fan_out) or batched (batch, fan_in, fan_out).  The
    dot product is accumulated in chunks of ``cfg.N`` inputs; the bias is added
    once at the end.  With ``spec`` every operand is an integer raw; products
    land in a wide accumulator (2*frac fractional bits) that is rounded and
    saturated only at write-back.  ``saturate_out=False`` returns the
    unsaturated accumulator rescaled to the spec grid (an argmax stage reading
    the accumulator directly).
    """
    x = np.asarray(inputs)
    w = np.asarray(weights)
    b = np.asarray(bias)
    if x.shape[-1] != w.shape[-2] or b.shape[-1] != w.shape[-1]:
        raise ValueError(f"shape mismatch: inputs {x.shape}, weights {w.shape}, bias {b.shape}")
    fan_in = x.shape[-1]
    chunk = fan_in if cfg is None else cfg.N

    if spec is None:
        x = x.astype(np.float64)
        acc = 0.0
        for s in range(0, fan_in, chunk):
            acc = acc + np.matmul(x[..., None, s:s + chunk], w[..., s:s + chunk, :])[..., 0, :]
        out = acc + b
        return np.maximum(out, 0.0) if relu else out

    acc = 0
    for s in range(0, fan_in, chunk):
        acc = acc + _wide_dot(x[..., s:s + chunk], w[..., s:s + chunk, :], spec)
    acc = acc + (b.astype(np.int64).astype(object) if acc.dtype == object else b.astype(np.int64)) \
        * (1 << spec.frac_bits)
    if acc.dtype == object:
        f = spec.frac_bits
        acc = np.vectorize(lambda v: _round_shift_int(v, f), otypes=[object])(acc)
        out = np.clip(acc, spec.raw_min, spec.raw_max).astype(np.int64) if saturate_out else acc
    else:
        out = shift_round_even(acc, spec.frac_bits)
        if saturate_out:
            out, _ = saturate(out, spec)
    if relu:
        out = np.maximum(out, 0)
    return out


def _round_shift_int(v: int, shift: int) -> int:
    if shift == 0:
        return v
    q, rem = v >> shift, v & ((1 << shift) - 1)
    half = 1 << (shift - 1)
    return q + (rem > half or (rem == half and q & 1))


def forward(x, weights, biases, spec: FixedSpec | None = None, cfg: PEConfig | None = None):
    """Whole network; returns real-valued logits (hidden ReLU, identity output)."""
    h = x
    if spec is not None:
        h, _ = quantize_array(x, spec)
    last = len(weights) - 1
    for k, (w, b) in enumerate(zip(weights, biases)):
        h = pe_forward(h, w, b, cfg, relu=k < last, spec=spec, saturate_out=k < last)
    if spec is not None:
        h = np.asarray(h, dtype=np.float64) * spec.step
    return h


def softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


# -- Monte Carlo inference ----------------------------------------------------

@dataclass
class InferenceResult:
    mc_outputs: np.ndarray    # (n_samples, [batch,] classes) softmax outputs
    mean_output: np.ndarray
    predicted: np.ndarray
    predictive_std: np.ndarray

    @classmethod
    def from_outputs(cls, outs):
        mean = outs.mean(axis=0)
        std = outs.std(axis=0, ddof=1) if outs.shape[0] > 1 else np.zeros_like(mean)
        return cls(outs, mean, np.argmax(mean, axis=-1), std)


def _sample_layer(source, mu, sig, batch, spec):
    shape = (batch,) + mu.shape
    if spec is None:
        return sample_weights(mu, sig, source.draw(shape))
    return updater_fast(mu, sig, source.draw_raw(shape, spec), spec)


def mc_inference(x0, params, n_samples: int = MC_DEFAULT, grng=None,
                 cfg: PEConfig | None = None) -> InferenceResult:
    """Average of ``n_samples`` stochastic forward passes.

    ``params`` is :class:`VariationalParams` (float path) or
    :class:`QuantizedParams` (fixed-point path).  ``x0`` is one image (features,)
    or a batch (batch, features); every image gets its own weight draws.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    grng = grng if grng is not None else make_source("reference", 0)
    x = np.asarray(x0, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None] if single else x
    spec = params.spec if isinstance(params, QuantizedParams) else None
    mus_w, sig_w, mus_b, sig_b = params.mu_w, params.sigma_w, params.mu_b, params.sigma_b
    outs = []
    for _ in range(n_samples):
        ws, bs = [], []
        for k in range(len(mus_w)):
            ws.append(_sample_layer(grng, mus_w[k], sig_w[k], len(xb), spec))
            bs.append(_sample_layer(grng, mus_b[k], sig_b[k], len(xb), spec))
        outs.append(softmax(forward(xb, ws, bs, spec, cfg)))
    outs = np.stack(outs)
    if single:
        outs = outs[:, 0]
    return InferenceResult.from_outputs(outs)


def block_seed(seed: int, block: int) -> int:
    ss = np.random.SeedSequence([seed, block])
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


def predict(params, X, n_samples: int = MC_DEFAULT, grng: str = "reference", seed: int = 0,
            threads: int = 1, block: int = IMAGE_BLOCK, **source_cfg):
    """Class predictions for a dataset.

    Images are processed in fixed blocks, each with its own generator seeded
    from ``(seed, block index)``, so results do not depend on ``threads``.
    """
    X = np.asarray(X, dtype=np.float64)
    starts = list(range(0, len(X), block))

    def run(k):
        src = make_source(grng, block_seed(seed, k), **source_cfg)
        s = starts[k]
        return mc_inference(X[s:s + block], params, n_samples, src).mean_output

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            means = list(ex.map(run, range(len(starts))))
    else:
        means = [run(k) for k in range(len(starts))]
    mean = np.concatenate(means) if means else np.empty((0, params.topology.layer_sizes[-1]))
    return np.argmax(mean, axis=-1), mean


def accuracy(params, X, y, **kw) -> float:
    pred, _ = predict(params, X, **kw)
    return float(np.mean(pred == np.asarray(y)))


def bitlength_sweep(params: VariationalParams, X, y, bits=(4, 6, 8, 10, 12, 16),
                    threshold: float | None = None, n_samples: int = MC_DEFAULT,
                    grng: str = "reference", seed: int = 0, threads: int = 1,
                    tolerance: float | None = None, **source_cfg):
    """Accuracy per total bit-length (frac = total - 3), plus the float baseline.

    Returns a dict with per-bit rows and the smallest bit-length meeting
    ``threshold`` (None if none meets it).  Without an absolute threshold,
    ``tolerance`` sets it relative to the float accuracy.
    """
    kw = dict(n_samples=n_samples, grng=grng, seed=seed, threads=threads, **source_cfg)
    float_acc = accuracy(params, X, y, **kw)
    rows = []
    for b in bits:
        spec = spec_for_bits(b)
        qp = QuantizedParams.from_params(params, spec)
        rows.append({"bits": b, "spec": str(spec), "accuracy": accuracy(qp, X, y, **kw)})
    if threshold is None and tolerance is not None:
        threshold = float_acc - tolerance
    smallest = None
    if threshold is not None:
        ok = [r["bits"] for r in rows if r["accuracy"] >= threshold]
        smallest = min(ok) if ok else None
    return {"float_accuracy": float_acc, "rows": rows, "threshold": threshold,
            "smallest_bits": smallest}

