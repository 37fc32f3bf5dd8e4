"""Float trainers: Bayes-by-Backprop (mean-field Gaussian) and a dropout FNN.

Both use plain momentum SGD on numpy.  Per minibatch the BBB objective is

    (kl_weight * KL(q || N(0, prior_std^2)) + sum of batch NLL) / batch_size

with one eps draw per weight tensor per minibatch and the Gaussian KL in
closed form.  Dividing by the batch size only rescales the learning rate.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, fields
from importlib import resources

import numpy as np

from .bnn import NetworkTopology, VariationalParams, sigma_from_rho, softmax


def load_defaults() -> dict:
    return json.loads(resources.files("hwbnn").joinpath("defaults.json").read_text())


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 100
    learning_rate: float = 0.05
    momentum: float = 0.9
    prior_std: float = 0.1
    kl_weight: float | None = None   # None -> 1 / minibatches per epoch
    data_fraction: float = 1.0
    rho_init: float = -5.0
    rho_lr_scale: float = 1.0        # learning-rate multiplier for rho only
    dropout: float = 0.5
    min_steps: int = 0               # raise epochs until this many updates are made
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.learning_rate <= 0 or self.prior_std <= 0:
            raise ValueError("learning_rate and prior_std must be positive")
        if self.kl_weight is not None and self.kl_weight < 0:
            raise ValueError("kl_weight must be >= 0")
        if not 0 < self.data_fraction <= 1:
            raise ValueError("data_fraction must lie in (0, 1]")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")
        if self.rho_lr_scale <= 0 or self.min_steps < 0:
            raise ValueError("rho_lr_scale must be positive and min_steps >= 0")

    def epochs_for(self, n_examples: int) -> int:
        per_epoch = math.ceil(n_examples / self.batch_size)
        return max(self.epochs, math.ceil(self.min_steps / per_epoch))

    @classmethod
    def from_defaults(cls, **overrides):
        d = load_defaults()["train"]
        names = {f.name for f in fields(cls)}
        cfg = {k: v for k, v in d.items() if k in names}
        cfg.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**cfg)

    def to_dict(self):
        return asdict(self)


def subsample(X, y, fraction: float, seed: int = 0):
    """Stratified subsample: ``round(count_c * fraction)`` per class, at least one
    per class present.  Warns when a class would otherwise vanish."""
    if not 0 < fraction <= 1:
        raise ValueError("fraction must lie in (0, 1]")
    y = np.asarray(y)
    if fraction == 1:
        return X, y
    rng = np.random.default_rng(seed)
    keep = []
    for c in np.unique(y):
        idx = np.flatnonzero(y == c)
        k = int(round(len(idx) * fraction))
        if k == 0:
            warnings.warn(f"class {c} rounds to zero examples at fraction {fraction}; keeping one",
                          stacklevel=2)
            k = 1
        keep.append(rng.choice(idx, size=k, replace=False))
    keep = np.sort(np.concatenate(keep))
    return X[keep], y[keep]


# -- shared pieces -----------------------------------------------------------------

def _forward(x, ws, bs, drop_masks=None):
    acts = [x]
    h = x
    last = len(ws) - 1
    for k, (w, b) in enumerate(zip(ws, bs)):
        z = h @ w + b
        if k < last:
            h = np.maximum(z, 0.0)
            if drop_masks is not None:
                h = h * drop_masks[k]
        else:
            h = z
        acts.append(h)
    return acts


def _backward(acts, ws, y, drop_masks=None):
    """Gradients of the summed cross-entropy w.r.t. weights and biases."""
    p = softmax(acts[-1])
    n = len(y)
    nll = -float(np.sum(np.log(p[np.arange(n), y] + 1e-300)))
    delta = p
    delta[np.arange(n), y] -= 1.0
    gw, gb = [None] * len(ws), [None] * len(ws)
    for k in range(len(ws) - 1, -1, -1):
        gw[k] = acts[k].T @ delta
        gb[k] = delta.sum(axis=0)
        if k:
            delta = delta @ ws[k].T
            if drop_masks is not None:
                delta = delta * drop_masks[k - 1]
            delta = delta * (acts[k] > 0)
    return nll, gw, gb


def kl_gaussian(mu, sigma, prior_std, log_sigma=None):
    """KL(N(mu, sigma^2) || N(0, prior_std^2)) summed over elements."""
    log_sigma = np.log(sigma) if log_sigma is None else log_sigma
    return float(np.sum(math.log(prior_std) - log_sigma
                        + (sigma ** 2 + mu ** 2) / (2 * prior_std ** 2) - 0.5))


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _log_softplus(rho):
    # log(softplus(rho)) without underflow; softplus(rho) ~ exp(rho) far left
    sp = sigma_from_rho(rho)
    return np.where(rho < -30.0, rho, np.log(np.maximum(sp, 1e-300)))


def _sigmoid_over_softplus(rho):
    # d log(sigma) / d rho; tends to 1 as rho -> -inf
    sp = sigma_from_rho(rho)
    return np.where(rho < -30.0, 1.0, _sigmoid(rho) / np.maximum(sp, 1e-300))


def elbo_and_grads(params: VariationalParams, X, y, eps_w, eps_b, prior_std: float,
                   kl_weight: float):
    """Objective ``kl_weight*KL + NLL_sum`` for fixed eps and its gradients.

    Returns (loss, nll, kl, grads) with grads ordered like
    ``(mu_w, rho_w, mu_b, rho_b)``.
    """
    sw, sb = params.sigma_w, params.sigma_b
    ws = [m + e * s for m, e, s in zip(params.mu_w, eps_w, sw)]
    bs = [m + e * s for m, e, s in zip(params.mu_b, eps_b, sb)]
    acts = _forward(X, ws, bs)
    nll, gw, gb = _backward(acts, ws, np.asarray(y))
    rhos = params.rho_w + params.rho_b
    kl = sum(kl_gaussian(m, s, prior_std, _log_softplus(r))
             for m, s, r in zip(params.mu_w + params.mu_b, sw + sb, rhos))
    p2 = prior_std ** 2

    def g_rho(g, e, s, r):
        # dKL/drho = (s/p2) * sigmoid(r) - sigmoid(r)/s
        return g * e * _sigmoid(r) + kl_weight * (s * _sigmoid(r) / p2 - _sigmoid_over_softplus(r))

    g_mu_w = [g + kl_weight * m / p2 for g, m in zip(gw, params.mu_w)]
    g_mu_b = [g + kl_weight * m / p2 for g, m in zip(gb, params.mu_b)]
    g_rho_w = [g_rho(g, e, s, r) for g, e, s, r in zip(gw, eps_w, sw, params.rho_w)]
    g_rho_b = [g_rho(g, e, s, r) for g, e, s, r in zip(gb, eps_b, sb, params.rho_b)]
    return nll + kl_weight * kl, nll, kl, (g_mu_w, g_rho_w, g_mu_b, g_rho_b)


class _Momentum:
    def __init__(self, tensors, lr, momentum, lr_scale=None):
        self.v = [np.zeros_like(t) for t in tensors]
        self.lr = [lr * s for s in (lr_scale or [1.0] * len(tensors))]
        self.m = momentum

    def step(self, tensors, grads):
        for t, g, v, lr in zip(tensors, grads, self.v, self.lr):
            v *= self.m
            v -= lr * g
            t += v


def _batches(n, batch_size, rng):
    perm = rng.permutation(n)
    return [perm[s:s + batch_size] for s in range(0, n, batch_size)]


def _check_finite(loss, epoch, batch):
    if not math.isfinite(loss):
        raise TrainingDiverged(f"loss became {loss} at epoch {epoch}, batch {batch}; "
                               f"lower learning_rate or check the inputs")


# -- trainers -----------------------------------------------------------------------

def train_bbb(X, y, topo: NetworkTopology, cfg: TrainConfig, history: list | None = None,
              init: VariationalParams | None = None) -> VariationalParams:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(y) == 0:
        raise ValueError("empty dataset")
    if X.shape[1] != topo.layer_sizes[0]:
        raise ValueError(f"inputs have {X.shape[1]} features, topology expects {topo.layer_sizes[0]}")
    X, y = subsample(X, y, cfg.data_fraction, cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    params = init.copy() if init is not None else VariationalParams.init(topo, cfg.seed, cfg.rho_init)
    n_batches = math.ceil(len(y) / cfg.batch_size)
    kl_weight = 1.0 / n_batches if cfg.kl_weight is None else cfg.kl_weight
    tensors = params.mu_w + params.rho_w + params.mu_b + params.rho_b
    L = len(params.mu_w)
    scales = ([1.0] * L + [cfg.rho_lr_scale] * L) * 2
    opt = _Momentum(tensors, cfg.learning_rate, cfg.momentum, scales)
    for epoch in range(cfg.epochs_for(len(y))):
        total = 0.0
        for bi, idx in enumerate(_batches(len(y), cfg.batch_size, rng)):
            eps_w = [rng.standard_normal(m.shape) for m in params.mu_w]
            eps_b = [rng.standard_normal(m.shape) for m in params.mu_b]
            loss, _, _, grads = elbo_and_grads(params, X[idx], y[idx], eps_w, eps_b,
                                               cfg.prior_std, kl_weight)
            _check_finite(loss, epoch, bi)
            scale = 1.0 / len(idx)
            opt.step(tensors, [g * scale for group in grads for g in group])
            total += loss
        if history is not None:
            history.append(total / len(y))
    return params


@dataclass
class FnnParams:
    weights: list
    biases: list

    def as_variational(self, rho: float = -1e3) -> VariationalParams:
        """Deterministic net as a BNN with vanishing sigma (softplus(-1000) == 0)."""
        return VariationalParams([w.copy() for w in self.weights],
                                 [np.full(w.shape, rho) for w in self.weights],
                                 [b.copy() for b in self.biases],
                                 [np.full(b.shape, rho) for b in self.biases])


def train_fnn_dropout(X, y, topo: NetworkTopology, cfg: TrainConfig,
                      history: list | None = None) -> FnnParams:
    """Backprop with inverted dropout on hidden activations (rate ``cfg.dropout``)."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(y) == 0:
        raise ValueError("empty dataset")
    X, y = subsample(X, y, cfg.data_fraction, cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    init = VariationalParams.init(topo, cfg.seed)
    ws, bs = init.mu_w, init.mu_b
    opt = _Momentum(ws + bs, cfg.learning_rate, cfg.momentum)
    keep = 1.0 - cfg.dropout
    for epoch in range(cfg.epochs_for(len(y))):
        total = 0.0
        for bi, idx in enumerate(_batches(len(y), cfg.batch_size, rng)):
            masks = None
            if cfg.dropout > 0:
                masks = [(rng.random((len(idx), o)) < keep) / keep for _, o in topo.shapes[:-1]]
            acts = _forward(X[idx], ws, bs, masks)
            nll, gw, gb = _backward(acts, ws, y[idx], masks)
            _check_finite(nll, epoch, bi)
            scale = 1.0 / len(idx)
            opt.step(ws + bs, [g * scale for g in gw + gb])
            total += nll
        if history is not None:
            history.append(total / len(y))
    return FnnParams(ws, bs)


def fnn_predict(params: FnnParams, X):
    return np.argmax(_forward(np.asarray(X, dtype=np.float64), params.weights, params.biases)[-1], axis=1)


def sgd_step_mu(params: VariationalParams, X, y, lr: float):
    """One plain SGD step on mu only with eps = 0 (used to compare against the FNN step)."""
    zeros_w = [np.zeros_like(m) for m in params.mu_w]
    zeros_b = [np.zeros_like(m) for m in params.mu_b]
    _, _, _, (g_mu_w, _, g_mu_b, _) = elbo_and_grads(params, X, y, zeros_w, zeros_b, 1.0, 0.0)
    for t, g in zip(params.mu_w + params.mu_b, g_mu_w + g_mu_b):
        t -= lr * g / len(y)
    return params


def sigma_summary(params: VariationalParams) -> dict:
    s = np.concatenate([sigma_from_rho(r).ravel() for r in params.rho_w])
    return {"sigma_mean": float(s.mean()), "sigma_max": float(s.max())}
