"""Conditional diagonal-Gaussian next-factor predictors and their training.

Inputs are features normalized to [-1, 1]. Means, variances and likelihoods are
in raw grid units, so the variance floor of 0.01 is a tenth of a cell.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nets import Adam, init_mlp, inv_softplus, mlp_backward, mlp_forward, sigmoid, softplus

LOG2PI = float(np.log(2.0 * np.pi))
MIN_VARIANCE = 0.01
REL_SCALE = 8.0  # cells per unit of the relative-position features


@dataclass
class TrainConfig:
    step_size: float = 3e-4
    batch_size: int = 256
    gradient_steps: int = 3000
    balance_lambda: float = 20.0
    proximity_eps: float = 9.0
    interaction_mix: float = 0.0
    seed: int = 0
    hidden: int = 64
    anneal: bool = False  # cosine-decay the step size to 5% over the run
    variance_power: float = 0.0  # beta of the beta-NLL loss; 0 is plain NLL

    def __post_init__(self):
        if not 0.0 <= self.interaction_mix <= 1.0:
            raise ValueError("interaction_mix must lie in [0, 1]")
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")


class GaussianPredictor:
    """A stack of ``n_models`` MLPs emitting (mean, variance) per output feature.

    mean = head_mean + x @ skip + skip_bias   (the skip path is fixed, not trained)
    var  = softplus(head_var) + min_variance
    """

    def __init__(self, input_dim, output_dim, hidden=64, n_models=1, min_variance=MIN_VARIANCE,
                 skip=None, skip_bias=None, rng=None, zero_last=True, params=None):
        self.input_dim = int(input_dim)
        self.output_dim = int(output_dim)
        self.hidden = int(hidden)
        self.n_models = int(n_models)
        self.min_variance = float(min_variance)
        self.skip = np.zeros((input_dim, output_dim)) if skip is None else np.asarray(skip, dtype=np.float64)
        self.skip_bias = np.zeros(output_dim) if skip_bias is None else np.asarray(skip_bias, dtype=np.float64)
        if params is None:
            params = init_mlp([input_dim, hidden, hidden, 2 * output_dim], n_models, rng, zero_last=zero_last)
        self.params = params

    @property
    def layers(self):
        """[(W, b), ...] for a single model."""
        if self.n_models != 1:
            raise ValueError("layers is only defined for a single model")
        return [(self.params[i][0], self.params[i + 1][0, 0]) for i in range(0, len(self.params), 2)]

    def copy(self):
        return GaussianPredictor(self.input_dim, self.output_dim, self.hidden, self.n_models,
                                 self.min_variance, self.skip.copy(), self.skip_bias.copy(),
                                 params=[p.copy() for p in self.params])

    def member(self, i):
        return GaussianPredictor(self.input_dim, self.output_dim, self.hidden, 1, self.min_variance,
                                 self.skip.copy(), self.skip_bias.copy(),
                                 params=[p[i:i + 1].copy() for p in self.params])

    @staticmethod
    def stack(models):
        m0 = models[0]
        params = [np.concatenate([m.params[k] for m in models], axis=0) for k in range(len(m0.params))]
        return GaussianPredictor(m0.input_dim, m0.output_dim, m0.hidden, len(models), m0.min_variance,
                                 m0.skip, m0.skip_bias, params=params)

    def _raw(self, x):
        out, acts = mlp_forward(self.params, x)
        d = self.output_dim
        mean = out[..., :d] + x @ self.skip + self.skip_bias
        z = out[..., d:]
        var = softplus(z) + self.min_variance
        return mean, var, z, acts

    def predict_batch(self, x):
        """x: (B, in) for one model or (M, B, in) for a stack."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.input_dim:
            raise ValueError(f"input has {x.shape[-1]} features, model expects {self.input_dim}")
        squeeze = x.ndim == 2
        if squeeze:
            x = np.broadcast_to(x, (self.n_models,) + x.shape)
        mean, var, _, _ = self._raw(x)
        if squeeze and self.n_models == 1:
            return mean[0], var[0]
        return mean, var


def predict(model: GaussianPredictor, x):
    """(mean, variance) for one input vector or a batch of them."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        m, v = model.predict_batch(x[None])
        return m[0], v[0]
    return model.predict_batch(x)


def gaussian_ll(mean, var, target):
    """Sum over the last axis of diagonal-Gaussian log densities."""
    r = target - mean
    return -0.5 * np.sum(LOG2PI + np.log(var) + r * r / var, axis=-1)


def log_likelihood(model: GaussianPredictor, x, target):
    x = np.asarray(x, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if target.shape[-1] != model.output_dim:
        raise ValueError(f"target has {target.shape[-1]} features, model emits {model.output_dim}")
    mean, var = predict(model, x)
    return gaussian_ll(mean, var, target)


def nll_and_grads(model: GaussianPredictor, x, target, weight=None, variance_power=0.0):
    """Weighted mean negative log-likelihood over axis 1 and its parameter gradients.

    x: (M, B, in), target: (M, B, out), weight: (M, B) or None. The loss summed
    over the M stacked models is what the gradients refer to.

    With ``variance_power`` > 0 each feature's term in the gradient is scaled by
    var**variance_power, held constant (beta-NLL). This stops the variance head
    from explaining away rare, sharp transitions the mean could learn. The
    returned loss is always the plain NLL.
    """
    mean, var, z, acts = model._raw(x)
    w = np.ones(x.shape[:2]) if weight is None else weight
    wn = w / w.sum(axis=1, keepdims=True)
    r = target - mean
    nll = 0.5 * np.sum(LOG2PI + np.log(var) + r * r / var, axis=-1)
    loss = np.sum(wn * nll, axis=1)
    scale = wn[..., None]
    if variance_power:
        scale = scale * var ** variance_power
    dmean = -(r / var) * scale
    dvar = (0.5 / var - 0.5 * r * r / (var * var)) * scale
    dz = dvar * sigmoid(z)
    dout = np.concatenate([dmean, dz], axis=-1)
    grads, _ = mlp_backward(model.params, acts, dout)
    return loss, grads


@dataclass
class PairDataset:
    """Records (s_a, s_b, s_b') normalized to [-1, 1], with per-record weights.

    ``target`` holds raw s_b' (grid units), the quantity the likelihood is on.
    For a stack of targets (many blocks sharing one source) arrays carry a
    leading model axis.
    """
    source: str
    target_name: str
    sa: np.ndarray
    sb: np.ndarray
    sb_next: np.ndarray
    raw_sb: np.ndarray
    raw_next: np.ndarray
    sa_pos: np.ndarray | None
    sb_pos: np.ndarray | None
    weights: np.ndarray
    b_mid: np.ndarray
    b_half: np.ndarray

    def __len__(self):
        return self.sb.shape[-2]

    def inputs(self, kind):
        if kind == "passive":
            return self.sb
        if kind != "active":
            raise ValueError(kind)
        parts = [np.broadcast_to(self.sa, self.sb.shape[:-1] + (self.sa.shape[-1],)), self.sb]
        if self.sa_pos is not None:
            parts.append((self.sa_pos - self.sb_pos) / REL_SCALE)
        return np.concatenate(parts, axis=-1).astype(np.float32)

    def subset(self, idx):
        idx = np.asarray(idx)

        def take(a):
            return None if a is None else a[..., idx, :]
        return PairDataset(self.source, self.target_name, take(self.sa), take(self.sb), take(self.sb_next),
                           take(self.raw_sb), take(self.raw_next), take(self.sa_pos), take(self.sb_pos),
                           self.weights[..., idx], self.b_mid, self.b_half)


def make_pair_dataset(trace, source, target, schema=None, block_ids=None):
    """Build the (a, b) dataset from a Trace. ``target`` may be 'blocks' for a stack of
    block targets (all of them, or those in ``block_ids``)."""
    schema = schema or trace.schema
    if source == "action":
        sa = trace.factor("action")
        sa_pos = None
    else:
        raw_a = trace.factor(source)
        sa = schema.normalize(source, raw_a).astype(np.float32)
        sa_pos = raw_a[:, 0:2]
    spec_name = "block_0" if target == "blocks" else target
    spec = schema.spec(spec_name)
    if target == "blocks":
        raw_b, raw_n = trace.blocks(False, block_ids), trace.blocks(True, block_ids)
    else:
        raw_b, raw_n = trace.factor(target), trace.factor(target, True)
    sb = ((raw_b - spec.mid) / spec.half).astype(np.float32)
    sbn = ((raw_n - spec.mid) / spec.half).astype(np.float32)
    sb_pos = raw_b[..., 0:2] if sa_pos is not None else None
    w = np.ones(sb.shape[:-1], dtype=np.float64)
    return PairDataset(source, target, sa, sb, sbn, raw_b, raw_n, sa_pos, sb_pos, w,
                       spec.mid.copy(), spec.half.copy())


def residual_skip(input_dim, offset, mid, half):
    """Fixed skip path adding the de-normalized s_b (found at ``offset`` in the input) to the mean."""
    d = len(mid)
    skip = np.zeros((input_dim, d))
    skip[offset + np.arange(d), np.arange(d)] = half
    return skip, np.asarray(mid, dtype=np.float64)


def new_model(data: PairDataset, kind, config: TrainConfig, n_models=1):
    x = data.inputs(kind)
    in_dim = x.shape[-1]
    offset = 0 if kind == "passive" else data.sa.shape[-1]
    skip, bias = residual_skip(in_dim, offset, data.b_mid, data.b_half)
    return GaussianPredictor(in_dim, len(data.b_mid), config.hidden, n_models, MIN_VARIANCE, skip, bias,
                             rng=np.random.default_rng(config.seed), zero_last=True)


def _init_heads(model, x, t, w):
    """Set output biases to the weighted residual mean and variance of the data."""
    d = model.output_dim
    base = x @ model.skip + model.skip_bias
    r = t - base
    wn = (w / w.sum(axis=-1, keepdims=True))[..., None]
    mu = np.sum(wn * r, axis=-2)
    var = np.sum(wn * (r - mu[..., None, :]) ** 2, axis=-2)
    b = model.params[-1]
    b[:, 0, :d] = mu
    b[:, 0, d:] = inv_softplus(np.maximum(var - model.min_variance, 1e-4))


def balance_weights(data: PairDataset, pair=None, lam=20.0, proximity_eps=9.0, passive=None):
    """lam+1 where the passive model predicts badly (ll < 0) and a, b are close; else 1.

    A source without a position (primitive actions) is never "close", so its
    active model sees the same data distribution as the passive one. Up-weighting
    there would let the active model win on any rare event the passive model has
    not yet fit (wall reflections), which says nothing about the source.
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    if passive is None:
        raise ValueError("balance_weights needs the passive model")
    ll = dataset_ll(passive, data, "passive")
    bad = ll < 0.0
    if data.sa_pos is not None:
        close = np.linalg.norm(data.sb_pos - data.sa_pos, axis=-1) < proximity_eps
    else:
        close = np.zeros_like(bad)
    return np.where(bad & close, lam + 1.0, 1.0)


def dataset_ll(model: GaussianPredictor, data: PairDataset, kind, chunk=65536):
    """Per-record log-likelihood, shape (N,) or (M, N) for stacks."""
    x = data.inputs(kind)
    t = data.raw_next
    stacked = x.ndim == 3
    if not stacked:
        x, t = x[None], t[None]
    if x.shape[0] != model.n_models:
        x = np.broadcast_to(x, (model.n_models,) + x.shape[1:])
    out = np.empty(x.shape[:2])
    for i in range(0, x.shape[1], chunk):
        mean, var, _, _ = model._raw(x[:, i:i + chunk].astype(np.float64))
        out[:, i:i + chunk] = gaussian_ll(mean, var, t[:, i:i + chunk].astype(np.float64))
    return out if stacked else out[0]


def dataset_mean(model, data, kind, chunk=65536):
    x = data.inputs(kind)
    stacked = x.ndim == 3
    if not stacked:
        x = x[None]
    out = np.empty(x.shape[:2] + (model.output_dim,))
    for i in range(0, x.shape[1], chunk):
        mean, _, _, _ = model._raw(x[:, i:i + chunk].astype(np.float64))
        out[:, i:i + chunk] = mean
    return out if stacked else out[0]


def fit(data: PairDataset, kind, config: TrainConfig, model=None, weights=None,
        interaction=None, log=None):
    """Minimize the weighted NLL with Adam. Minibatches are drawn in proportion to weight.

    ``model`` warm-starts training; otherwise a fresh model has its output biases
    set from data statistics. ``interaction`` (per-record 0/1) enables the
    interaction-weighted active loss through ``config.interaction_mix``.
    """
    if len(data) == 0:
        raise ValueError("empty dataset")
    x_all = data.inputs(kind)
    t_all = data.raw_next
    stacked = x_all.ndim == 3
    if not stacked:
        x_all, t_all = x_all[None], t_all[None]
    M, N = x_all.shape[:2]
    w = np.ones(N) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.ndim == 2:
        w = w.max(axis=0)
    rng = np.random.default_rng(config.seed + 7919)
    if model is None:
        model = new_model(data, kind, config, n_models=M)
        _init_heads(model, x_all.astype(np.float64), t_all.astype(np.float64), w)
    loss_w = None
    if interaction is not None and config.interaction_mix > 0:
        inter = np.asarray(interaction, dtype=np.float64)
        loss_w = (1.0 - config.interaction_mix) + config.interaction_mix * inter
        if loss_w.ndim == 1:
            loss_w = np.broadcast_to(loss_w, (M, N))
    opt = Adam(model.params, lr=config.step_size)
    cdf = np.cumsum(w)
    cdf /= cdf[-1]
    B = min(config.batch_size, N)
    for step in range(config.gradient_steps):
        if config.anneal:
            frac = step / max(1, config.gradient_steps)
            opt.lr = config.step_size * (0.05 + 0.95 * 0.5 * (1.0 + np.cos(np.pi * frac)))
        idx = np.minimum(np.searchsorted(cdf, rng.random(B)), N - 1)
        xb = x_all[:, idx].astype(np.float64)
        tb = t_all[:, idx].astype(np.float64)
        lw = None if loss_w is None else loss_w[:, idx] + 1e-12
        loss, grads = nll_and_grads(model, xb, tb, lw, config.variance_power)
        if not np.all(np.isfinite(loss)):
            raise FloatingPointError("non-finite loss; reduce the step size")
        opt.step(model.params, grads)
        if log is not None and step % 500 == 0:
            log(step, float(loss.mean()))
    return model
