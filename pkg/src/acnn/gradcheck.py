"""Central finite-difference checks for every differentiable map, in float64.

Each check draws random *generic* points: inputs whose ReLU pre-activations
and max-pool top-2 gaps stay clear of the kinks by ``KINK_MARGIN``, so a
step of ``H`` cannot flip an active set.
"""

import numpy as np

from . import annular, numeric
from .config import ClassHead, LayerConfig, NetworkConfig, SegmentHead
from .geometry import PointCloud, RingSpec
from .network import ACNN, interpolation_weights, pool_gap, plan_geometry, stack_geometry

H = 1e-5
THRESHOLD = 1e-4
KINK_MARGIN = 1e-3


def rel_error(analytic, numeric_):
    a = np.ravel(analytic)
    n = np.ravel(numeric_)
    scale = max(np.linalg.norm(a), np.linalg.norm(n), 1e-12)
    return float(np.linalg.norm(a - n) / scale)


def fd_gradient(f, x, h=H):
    """d f / d x by central differences; ``f`` returns a scalar, ``x`` is perturbed in place."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gf[i] = (fp - fm) / (2 * h)
    return g


def _away_from_zero(rng, shape, margin=KINK_MARGIN):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, np.sign(x) * margin + x, x)


_pool_gap = pool_gap


# --------------------------------------------------------------- single ops


def check_dense(rng):
    x, w, b = rng.normal(size=(4, 5)), rng.normal(size=(5, 3)), rng.normal(size=3)
    proj = rng.normal(size=(4, 3))
    loss = lambda: float((numeric.dense(x, w, b)[0] * proj).sum())
    _, cache = numeric.dense(x, w, b)
    dx, dw, db = numeric.dense_backward(cache, proj, w)
    return max(rel_error(dx, fd_gradient(loss, x)), rel_error(dw, fd_gradient(loss, w)), rel_error(db, fd_gradient(loss, b)))


def check_batch_norm(rng, training=True):
    x = rng.normal(size=(3, 4, 5)) * 2 + 1
    gamma, beta = rng.normal(size=5), rng.normal(size=5)
    proj = rng.normal(size=x.shape)
    stats = numeric.RunningStats(rng.normal(size=5), rng.uniform(0.5, 2, size=5))

    def loss():
        s = numeric.RunningStats(stats.mean.copy(), stats.var.copy())
        return float((numeric.batch_norm(x, gamma, beta, s, training)[0] * proj).sum())

    s = numeric.RunningStats(stats.mean.copy(), stats.var.copy())
    _, cache = numeric.batch_norm(x, gamma, beta, s, training)
    dx, dg, db = numeric.batch_norm_backward(cache, proj)
    return max(rel_error(dx, fd_gradient(loss, x)), rel_error(dg, fd_gradient(loss, gamma)), rel_error(db, fd_gradient(loss, beta)))


def check_relu(rng):
    x = _away_from_zero(rng, (6, 7))
    proj = rng.normal(size=x.shape)
    loss = lambda: float((numeric.relu(x)[0] * proj).sum())
    _, mask = numeric.relu(x)
    return rel_error(numeric.relu_backward(mask, proj), fd_gradient(loss, x))


def check_dropout(rng):
    x = rng.normal(size=(5, 6))
    proj = rng.normal(size=x.shape)
    _, keep = numeric.dropout(x, 0.5, np.random.default_rng(int(rng.integers(1 << 30))), True)
    loss = lambda: float((x * keep * proj).sum())
    return rel_error(numeric.dropout_backward(keep, proj), fd_gradient(loss, x))


def check_softmax_ce(rng):
    logits = rng.normal(size=(4, 6)) * 2
    labels = rng.integers(0, 6, size=4)
    loss = lambda: numeric.softmax_cross_entropy(logits, labels)[0]
    return rel_error(numeric.softmax_cross_entropy(logits, labels)[1], fd_gradient(loss, logits))


def check_annular_conv(rng, fast=False):
    K, fin, fout, ks = 5, 2, 3, 3
    x = rng.normal(size=(K, fin))
    kern = annular.ConvKernel(rng.normal(size=(ks, fin, fout)), rng.normal(size=fout))
    proj = rng.normal(size=(K, fout))
    if fast:
        fwd = lambda: float((annular.conv_forward_fast(x, kern.weights, kern.bias) * proj).sum())
        dx, dw, db = annular.conv_backward_fast(x, kern.weights, proj)
    else:
        fwd = lambda: float((annular.annular_conv_forward(x, kern) * proj).sum())
        dx, dw, db = annular.annular_conv_backward(x, kern, proj)
    return max(rel_error(dx, fd_gradient(fwd, x)), rel_error(dw, fd_gradient(fwd, kern.weights)),
               rel_error(db, fd_gradient(fwd, kern.bias)))


def check_ring_max_pool(rng):
    while True:
        x = rng.normal(size=(2, 6, 4))
        if _pool_gap(x) > KINK_MARGIN:
            break
    proj = rng.normal(size=(2, 4))
    loss = lambda: float((annular.ring_max_pool(x)[0] * proj).sum())
    _, arg = annular.ring_max_pool(x)
    return rel_error(annular.ring_max_pool_backward(x.shape, arg, proj), fd_gradient(loss, x))


def check_conv_relu_pool(rng):
    """conv -> (no batch norm) -> ReLU -> pool, on one ring."""
    K, fin, fout = 6, 3, 4
    while True:
        x = rng.normal(size=(K, fin))
        w, b = rng.normal(size=(3, fin, fout)), rng.normal(size=fout)
        z = annular.conv_forward_fast(x, w, b)
        y, _ = numeric.relu(z)
        if np.abs(z).min() > KINK_MARGIN and _pool_gap(y) > KINK_MARGIN:
            break
    proj = rng.normal(size=fout)

    def loss():
        z = annular.conv_forward_fast(x, w, b)
        return float((annular.ring_max_pool(numeric.relu(z)[0])[0] * proj).sum())

    z = annular.conv_forward_fast(x, w, b)
    y, mask = numeric.relu(z)
    _, arg = annular.ring_max_pool(y)
    g = numeric.relu_backward(mask, annular.ring_max_pool_backward(y.shape, arg, proj))
    dx, dw, db = annular.conv_backward_fast(x, w, g)
    return max(rel_error(dx, fd_gradient(loss, x)), rel_error(dw, fd_gradient(loss, w)), rel_error(db, fd_gradient(loss, b)))


def check_interpolation(rng):
    known = rng.normal(size=(7, 3))
    query = rng.normal(size=(5, 3))
    feats = rng.normal(size=(7, 4))
    proj = rng.normal(size=(5, 4))
    idx, w = interpolation_weights(known, query)
    loss = lambda: float((np.einsum("qj,qjf->qf", w, feats[idx]) * proj).sum())
    d = np.zeros_like(feats)
    np.add.at(d, idx.ravel(), (w[..., None] * proj[:, None, :]).reshape(-1, 4))
    return rel_error(d, fd_gradient(loss, feats))


# ------------------------------------------------------------- composites


def _random_cloud(rng, n):
    pts = rng.normal(size=(n, 3))
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    pts *= rng.uniform(0.7, 1.0, size=(n, 1))
    nrm = rng.normal(size=(n, 3))
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    return PointCloud(pts, nrm)


def small_class_config(classes=3):
    return NetworkConfig(
        (
            LayerConfig(8, (RingSpec(0.0, 0.5, 4), RingSpec(0.5, 1.0, 5)), ((3, 4), (4,))),
            LayerConfig(1, (), ((6,),)),
        ),
        ClassHead(classes, (5,), 0.0, True),
    )


def small_seg_config(parts=2):
    return NetworkConfig(
        (
            LayerConfig(6, (RingSpec(0.0, 0.6, 4),), ((4,),)),
            LayerConfig(1, (), ((5,),)),
        ),
        SegmentHead(parts, 4),
    )


def _frozen_forward(model, xyz, geoms, training):
    """Forward pass that leaves batch-norm running statistics untouched."""
    saved = {k: v.copy() for k, v in model.buffers.items()}
    try:
        return model.forward(xyz, geoms, training=training)
    finally:
        model.buffers = saved


def _generic_model(rng, config, n_points, batch, training):
    """Draw clouds and weights until the forward pass is clear of every kink."""
    while True:
        clouds = [_random_cloud(rng, n_points) for _ in range(batch)]
        geoms = stack_geometry([plan_geometry(c, config) for c in clouds])
        model = ACNN(config, rng=np.random.default_rng(int(rng.integers(1 << 30))), dtype=np.float64)
        for k, v in model.params.items():
            if k.endswith(".b") or k.endswith(".beta"):
                model.params[k] = rng.normal(scale=0.3, size=v.shape)
            elif k.endswith(".gamma"):
                model.params[k] = rng.uniform(0.5, 1.5, size=v.shape)
        xyz = np.stack([c.points for c in clouds])
        model.track_kinks = True
        _frozen_forward(model, xyz, geoms, training)
        model.track_kinks = False
        if model.kink_margin > KINK_MARGIN:
            return model, xyz, geoms


def _check_model(rng, config, n_points, batch, training, wrt_xyz):
    model, xyz, geoms = _generic_model(rng, config, n_points, batch, training)
    out_shape = _frozen_forward(model, xyz, geoms, training).shape
    proj = rng.normal(size=out_shape)
    loss = lambda: float((_frozen_forward(model, xyz, geoms, training) * proj).sum())
    _frozen_forward(model, xyz, geoms, training)
    model.zero_grads()
    d_xyz = model.backward(proj, need_xyz=wrt_xyz)
    # one relative error over the full gradient vector: parameters feeding a
    # training-mode batch norm have an exactly-zero gradient on their own
    analytic = [model.grads[name].ravel() for name in model.params]
    numerical = [fd_gradient(loss, p).ravel() for p in model.params.values()]
    if wrt_xyz:
        analytic.append(d_xyz.ravel())
        numerical.append(fd_gradient(loss, xyz).ravel())
    return rel_error(np.concatenate(analytic), np.concatenate(numerical))


def check_encoder_layer(rng):
    """One ring layer (conv -> BN -> ReLU -> pool, two rings) plus a global layer,
    w.r.t. every parameter and the input coordinates."""
    return _check_model(rng, small_class_config(), 24, 2, True, True)


def check_classifier(rng):
    return _check_model(rng, small_class_config(), 24, 2, False, True)


def check_segmenter(rng):
    return _check_model(rng, small_seg_config(), 20, 2, True, False)


CHECKS = {
    "dense": check_dense,
    "batch_norm_train": lambda r: check_batch_norm(r, True),
    "batch_norm_eval": lambda r: check_batch_norm(r, False),
    "relu": check_relu,
    "dropout": check_dropout,
    "softmax_cross_entropy": check_softmax_ce,
    "annular_conv": check_annular_conv,
    "annular_conv_gemm": lambda r: check_annular_conv(r, fast=True),
    "ring_max_pool": check_ring_max_pool,
    "conv_relu_pool": check_conv_relu_pool,
    "interpolate_features": check_interpolation,
    "encoder_layer": check_encoder_layer,
    "classifier": check_classifier,
    "segmenter": check_segmenter,
}


def run_all(seed=0, points=20, names=None):
    """Max relative error per check over ``points`` random generic points."""
    rng = np.random.default_rng(seed)
    out = {}
    for name, fn in CHECKS.items():
        if names is not None and name not in names:
            continue
        out[name] = max(fn(rng) for _ in range(points))
    return out
