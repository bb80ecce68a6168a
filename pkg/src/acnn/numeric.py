"""Dense layers, normalization, losses and Adam, each with a hand-written adjoint.

Forward functions return ``(output, cache)``; the matching ``*_backward``
takes the cache and the upstream gradient. Arrays keep whatever float dtype
they come in with, so the same code runs float32 for training and float64
for gradient checks.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument, ShapeError

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


def dense(x, weights, bias):
    if x.shape[-1] != weights.shape[0]:
        raise ShapeError(f"input width {x.shape[-1]} != weight rows {weights.shape[0]}")
    return x @ weights + bias, x


def dense_backward(cache, g, weights):
    x = cache
    d_w = x.reshape(-1, x.shape[-1]).T @ g.reshape(-1, g.shape[-1])
    d_b = g.reshape(-1, g.shape[-1]).sum(axis=0)
    return g @ weights.T, d_w, d_b


@dataclass
class RunningStats:
    mean: np.ndarray
    var: np.ndarray

    @classmethod
    def fresh(cls, channels, dtype=np.float32):
        return cls(np.zeros(channels, dtype), np.ones(channels, dtype))


def batch_norm(x, gamma, beta, stats, training, momentum=BN_MOMENTUM, eps=BN_EPS):
    """Normalize over every axis but the last (channels).

    In training mode batch statistics are used and ``stats`` is updated in
    place as ``stats = momentum * stats + (1 - momentum) * batch``.
    """
    axes = tuple(range(x.ndim - 1))
    if training:
        mu = x.mean(axis=axes)
        var = x.var(axis=axes)
        stats.mean[...] = momentum * stats.mean + (1 - momentum) * mu
        stats.var[...] = momentum * stats.var + (1 - momentum) * var
    else:
        mu = stats.mean.astype(x.dtype)
        var = stats.var.astype(x.dtype)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    return gamma * xhat + beta, (xhat, inv, gamma, training)


def batch_norm_backward(cache, g):
    xhat, inv, gamma, training = cache
    axes = tuple(range(g.ndim - 1))
    d_gamma = (g * xhat).sum(axis=axes)
    d_beta = g.sum(axis=axes)
    dxhat = g * gamma
    if not training:
        return dxhat * inv, d_gamma, d_beta
    m = xhat.size // xhat.shape[-1]
    d_x = inv / m * (m * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes))
    return d_x, d_gamma, d_beta


def relu(x):
    """max(x, 0); the subgradient at exactly 0 is taken as 0."""
    mask = x > 0
    return x * mask, mask


def relu_backward(mask, g):
    return g * mask


def dropout(x, rate, rng, training):
    """Inverted dropout: kept units are scaled by 1/(1-rate) while training."""
    if not 0.0 <= rate <= 1.0:
        raise InvalidArgument(f"dropout rate must be in [0, 1], got {rate}")
    if not training or rate == 0.0:
        return x, None
    if rate == 1.0:
        return np.zeros_like(x), np.zeros(x.shape, dtype=x.dtype)
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / x.dtype.type(1.0 - rate)
    return x * keep, keep


def dropout_backward(keep, g):
    return g if keep is None else g * keep


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy over the leading axes; returns ``(loss, d_logits)``.

    ``logits`` is ``[..., c]`` and ``labels`` holds integer classes of shape
    ``logits.shape[:-1]``.
    """
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    if labels.shape != logits.shape[:-1]:
        raise ShapeError(f"labels shape {labels.shape} != logits batch shape {logits.shape[:-1]}")
    z = logits - logits.max(axis=-1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=-1))
    picked = np.take_along_axis(z, labels[..., None], axis=-1)[..., 0]
    count = max(labels.size, 1)
    loss = float((logsum - picked).sum() / count)
    grad = np.exp(z - logsum[..., None])
    np.put_along_axis(grad, labels[..., None], np.take_along_axis(grad, labels[..., None], axis=-1) - 1, axis=-1)
    return loss, grad / count


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decay: float = 0.7
    decay_every: int = 20
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def lr_at(self, epoch):
        """Step-decayed learning rate for a 0-based epoch."""
        if self.decay_every <= 0:
            return self.lr
        return self.lr * self.decay ** (epoch // self.decay_every)


def adam_step(params, grads, state, lr=None):
    """One Adam update, in place on ``params`` (a name -> array mapping)."""
    lr = state.lr if lr is None else lr
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, param {p.shape}")
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + state.eps)
        p -= (lr * update).astype(p.dtype, copy=False)
    return params, state
