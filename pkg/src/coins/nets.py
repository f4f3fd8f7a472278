"""Small feed-forward networks with hand-written backprop and an Adam optimizer.

Every network here is a stack of ``M`` independent MLPs that share a shape, so
weights are stored as ``(M, fan_in, fan_out)`` and biases as ``(M, 1, fan_out)``.
A single model is simply ``M == 1``. Stacking lets one numpy call train a
hundred block models at once.
"""
from __future__ import annotations

import numpy as np


def init_mlp(sizes, n_models=1, rng=None, zero_last=False, dtype=np.float64):
    """Glorot-uniform weights, zero biases. Returns a flat list [W0, b0, W1, b1, ...]."""
    rng = np.random.default_rng(rng)
    params = []
    for k, (fi, fo) in enumerate(zip(sizes[:-1], sizes[1:])):
        last = k == len(sizes) - 2
        if last and zero_last:
            W = np.zeros((n_models, fi, fo), dtype=dtype)
        else:
            lim = np.sqrt(6.0 / (fi + fo))
            W = rng.uniform(-lim, lim, size=(n_models, fi, fo)).astype(dtype)
        params += [W, np.zeros((n_models, 1, fo), dtype=dtype)]
    return params


def mlp_forward(params, x):
    """x: (M, B, in). Hidden layers use tanh, the last layer is linear.

    Returns the output and the list of layer inputs needed by ``mlp_backward``.
    """
    acts = [x]
    h = x
    n = len(params) // 2
    for k in range(n):
        W, b = params[2 * k], params[2 * k + 1]
        z = np.matmul(h, W) + b
        if k < n - 1:
            h = np.tanh(z)
            acts.append(h)
        else:
            h = z
    return h, acts


def mlp_backward(params, acts, dout):
    """Gradients of a scalar loss given dL/d(output). Also returns dL/dx."""
    n = len(params) // 2
    grads = [None] * len(params)
    g = dout
    for k in range(n - 1, -1, -1):
        W = params[2 * k]
        h_in = acts[k]
        grads[2 * k] = np.matmul(h_in.transpose(0, 2, 1), g)
        grads[2 * k + 1] = g.sum(axis=1, keepdims=True)
        g = np.matmul(g, W.transpose(0, 2, 1))
        if k > 0:
            g = g * (1.0 - acts[k] ** 2)
    return grads, g


def softplus(z):
    return np.logaddexp(0.0, z)


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def inv_softplus(y):
    y = np.asarray(y, dtype=np.float64)
    return np.where(y > 30.0, y, np.log(np.expm1(np.maximum(y, 1e-12))))


class Adam:
    """Adam over a list of arrays, updated in place."""

    def __init__(self, params, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self):
        return {"t": self.t, "m": self.m, "v": self.v}


def flatten(params):
    return np.concatenate([p.ravel() for p in params])


def unflatten(vec, like):
    out, i = [], 0
    for p in like:
        out.append(vec[i:i + p.size].reshape(p.shape).copy())
        i += p.size
    return out
