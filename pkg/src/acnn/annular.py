"""Annular convolution over ordered ring neighbors, and ring max pooling.

Features are laid out ``[..., K, F]``: any leading batch axes, then the K
ordered neighbors of one ring, then channels. Convolution wraps around the
neighbor axis, so a rotation of the K rows rotates the output the same way.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument, ShapeError


@dataclass
class ConvKernel:
    weights: np.ndarray  # k_size x F_in x F_out
    bias: np.ndarray  # F_out

    def __post_init__(self):
        self.weights = np.asarray(self.weights)
        self.bias = np.asarray(self.bias)
        if self.weights.ndim != 3:
            raise ShapeError(f"weights must be k_size x F_in x F_out, got {self.weights.shape}")
        ks = self.weights.shape[0]
        if ks < 1 or ks % 2 == 0:
            raise InvalidArgument(f"kernel size must be odd and positive, got {ks}")
        if self.bias.shape != (self.weights.shape[2],):
            raise ShapeError(f"bias shape {self.bias.shape} != ({self.weights.shape[2]},)")

    @property
    def k_size(self):
        return self.weights.shape[0]


def circular_extend(features, k_size):
    """Append the first ``k_size - 1`` rows after the last one."""
    x = np.asarray(features)
    if x.ndim < 2:
        raise ShapeError("features must be at least K x F")
    if int(k_size) != k_size or k_size < 1:
        raise InvalidArgument(f"k_size must be a positive integer, got {k_size}")
    K = x.shape[-2]
    if k_size - 1 > K:
        raise InvalidArgument(f"k_size - 1 = {k_size - 1} exceeds ring size {K}")
    if k_size == 1:
        return x.copy()
    return np.concatenate([x, x[..., : k_size - 1, :]], axis=-2)


def _check(features, kernel):
    x = np.asarray(features)
    if x.ndim < 2 or x.shape[-2] < 1:
        raise ShapeError(f"features must be [..., K, F] with K >= 1, got {x.shape}")
    if x.shape[-1] != kernel.weights.shape[1]:
        raise ShapeError(f"feature channels {x.shape[-1]} != kernel input channels {kernel.weights.shape[1]}")
    return x


def annular_conv_forward(features, kernel):
    """Circular 1 x k_size convolution with stride 1; K rows in, K rows out.

    Each output accumulates taps in ascending order, channels ascending within
    a tap, then adds the bias. That order is fixed per window, so rotating the
    input rows rotates the output bit for bit.
    """
    x = _check(features, kernel)
    K = x.shape[-2]
    ks = kernel.k_size
    ext = circular_extend(x, ks)
    w = kernel.weights.astype(x.dtype, copy=False)
    out = np.zeros(x.shape[:-1] + (w.shape[2],), dtype=np.result_type(x, w))
    for t in range(ks):
        win = ext[..., t : t + K, :]
        for c in range(w.shape[1]):
            out += win[..., c : c + 1] * w[t, c]
    out += kernel.bias
    return out


def annular_conv_backward(features, kernel, upstream_grad):
    """Adjoint of :func:`annular_conv_forward`.

    Returns ``(d_features, d_weights, d_bias)``; leading batch axes are summed
    into the parameter gradients.
    """
    x = _check(features, kernel)
    g = np.asarray(upstream_grad)
    if g.shape != x.shape[:-1] + (kernel.weights.shape[2],):
        raise ShapeError(f"upstream grad shape {g.shape} does not match forward output")
    K = x.shape[-2]
    ks = kernel.k_size
    w = kernel.weights
    ext = circular_extend(x, ks)
    lead = tuple(range(x.ndim - 2))
    d_bias = g.sum(axis=lead + (x.ndim - 2,))
    d_w = np.empty_like(w, dtype=np.result_type(x, g))
    d_ext = np.zeros(ext.shape, dtype=np.result_type(g, w))
    for t in range(ks):
        win = ext[..., t : t + K, :]
        d_w[t] = win.reshape(-1, win.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        d_ext[..., t : t + K, :] += g @ w[t].T
    d_x = d_ext[..., :K, :].copy()
    d_x[..., : ks - 1, :] += d_ext[..., K:, :]
    return d_x, d_w, d_bias


def conv_forward_fast(x, weights, bias):
    """Batched annular convolution through matrix multiplies.

    Same map as :func:`annular_conv_forward`; accumulation order is left to
    BLAS, so results agree to rounding rather than bitwise.
    """
    ks = weights.shape[0]
    if ks == 1:
        return x @ weights[0] + bias
    K = x.shape[-2]
    ext = circular_extend(x, ks)
    cols = np.concatenate([ext[..., t : t + K, :] for t in range(ks)], axis=-1)
    return cols @ weights.reshape(-1, weights.shape[2]) + bias


def conv_backward_fast(x, weights, g):
    ks = weights.shape[0]
    lead = tuple(range(x.ndim - 1))
    d_bias = g.sum(axis=lead)
    g2 = g.reshape(-1, g.shape[-1])
    if ks == 1:
        d_w = (x.reshape(-1, x.shape[-1]).T @ g2)[None]
        return g @ weights[0].T, d_w, d_bias
    K = x.shape[-2]
    ext = circular_extend(x, ks)
    cols = np.concatenate([ext[..., t : t + K, :] for t in range(ks)], axis=-1)
    d_w = (cols.reshape(-1, cols.shape[-1]).T @ g2).reshape(weights.shape)
    d_cols = g @ weights.reshape(-1, weights.shape[2]).T
    cin = x.shape[-1]
    d_x = d_cols[..., :cin].copy()
    for t in range(1, ks):
        d_x += np.roll(d_cols[..., t * cin : (t + 1) * cin], t, axis=-2)
    return d_x, d_w, d_bias


def ring_max_pool(features):
    """Per-channel max over the ring axis.

    Returns ``(pooled, argmax)``; ties resolve to the smallest row index.
    """
    x = np.asarray(features)
    if x.ndim < 2 or x.shape[-2] < 1:
        raise ShapeError(f"features must be [..., K, F] with K >= 1, got {x.shape}")
    arg = np.argmax(x, axis=-2)
    pooled = np.take_along_axis(x, arg[..., None, :], axis=-2)[..., 0, :]
    return pooled, arg


def ring_max_pool_backward(shape, argmax, upstream_grad):
    d_x = np.zeros(shape, dtype=np.asarray(upstream_grad).dtype)
    np.put_along_axis(d_x, argmax[..., None, :], np.asarray(upstream_grad)[..., None, :], axis=-2)
    return d_x
