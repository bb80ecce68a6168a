"""A-CNN encoder, classification/segmentation heads, training and evaluation.

Geometry (sampling, ring membership, ordering) is planned per cloud up front
and treated as constant during differentiation; the learnable part runs
batched over ``[B, M, K, C]`` arrays.
"""

import enum
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import annular, numeric
from .checkpoint import entry_text, read_checkpoint, text_entry, write_checkpoint
from .config import NetworkConfig, parse_config
from .errors import ConfigMismatch, InvalidArgument, NormalsRequired, TrainingDiverged
from .geometry import PointCloud, RingSpec, farthest_point_sampling, order_batch, ring_knn_batch

COINCIDENT_EPS = 1e-10


class Variant(str, enum.Enum):
    FULL = "full"
    BALL_QUERY = "ball_query"
    NO_ORDERING = "no_ordering"
    NO_ANNULAR = "no_annular"


# ---------------------------------------------------------------- geometry plan


@dataclass
class LevelGeom:
    centroids: np.ndarray | None  # indices into the previous level; None for a global layer
    rings: list = field(default_factory=list)  # ordered [M, k] index arrays
    counts: list = field(default_factory=list)  # genuine (pre-padding) members per centroid


def search_rings(layer, variant):
    if variant == Variant.BALL_QUERY:
        return [RingSpec(0.0, r.r_outer, r.k) for r in layer.rings]
    return list(layer.rings)


def plan_geometry(cloud, config, variant=Variant.FULL, rng=None, seed_index=0, start_rng=None):
    """Per-layer centroids and ordered ring members for one cloud.

    ``start_rng`` draws a random ordering start per neighborhood (default:
    start at the nearest member). ``rng`` supplies the random permutations of
    the ``no_ordering`` variant.
    """
    if cloud.normals is None:
        raise NormalsRequired("ordering needs per-point normals; estimate them first")
    variant = Variant(variant)
    if variant == Variant.NO_ORDERING and rng is None:
        raise InvalidArgument("no_ordering variant needs an rng")
    pts, nrm = cloud.points, cloud.normals
    levels = []
    for li, layer in enumerate(config.layers):
        if layer.is_global:
            levels.append(LevelGeom(None))
            pts, nrm = np.zeros((1, 3)), np.array([[0.0, 0.0, 1.0]])
            continue
        if layer.centroids > len(pts):
            raise InvalidArgument(f"layer {li} wants {layer.centroids} centroids from {len(pts)} points")
        cent = farthest_point_sampling(pts, layer.centroids, seed_index if li == 0 else 0)
        geom = LevelGeom(cent)
        for ring in search_rings(layer, variant):
            idx, cnt = ring_knn_batch(pts, cent, ring)
            if variant == Variant.NO_ORDERING:
                idx = rng.permuted(idx, axis=1)
            else:
                start = None if start_rng is None else start_rng.integers(0, ring.k, size=len(cent))
                idx = order_batch(pts, pts[cent], nrm[cent], idx, start)
            geom.rings.append(idx)
            geom.counts.append(cnt)
        levels.append(geom)
        pts, nrm = pts[cent], nrm[cent]
    return levels


def thread_count():
    """Worker cap from ``ACNN_THREADS``; defaults to the logical core count."""
    raw = os.environ.get("ACNN_THREADS", "").strip()
    if not raw:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise InvalidArgument(f"ACNN_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise InvalidArgument(f"ACNN_THREADS must be a positive integer, got {raw!r}")
    return n


def plan_batch(clouds, config, variant=Variant.FULL, rng=None, threads=None):
    """plan_geometry over a list of clouds, stacked.

    Each cloud gets its own child generator, so the result does not depend on
    the number of worker threads.
    """
    rngs = [None] * len(clouds) if rng is None else rng.spawn(len(clouds))
    threads = thread_count() if threads is None else threads
    job = lambda i: plan_geometry(clouds[i], config, variant, rngs[i])
    if threads <= 1 or len(clouds) < 2:
        plans = [job(i) for i in range(len(clouds))]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            plans = list(pool.map(job, range(len(clouds))))
    return stack_geometry(plans)


def stack_geometry(plans):
    """Stack per-cloud plans into batched index arrays."""
    out = []
    for li in range(len(plans[0])):
        first = plans[0][li]
        if first.centroids is None:
            out.append(LevelGeom(None))
            continue
        rings = [np.stack([p[li].rings[r] for p in plans]) for r in range(len(first.rings))]
        counts = [np.stack([p[li].counts[r] for p in plans]) for r in range(len(first.rings))]
        out.append(LevelGeom(np.stack([p[li].centroids for p in plans]), rings, counts))
    return out


def redundancy_rate(cloud, layer, variant=Variant.FULL, centroids=None):
    """Fraction of genuine ring members also found in another ring of the same centroid."""
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    if centroids is None:
        centroids = farthest_point_sampling(pts, layer.centroids, 0)
    members = []
    for ring in search_rings(layer, Variant(variant)):
        idx, cnt = ring_knn_batch(pts, centroids, ring)
        members.append([set(row[:c].tolist()) for row, c in zip(idx, cnt)])
    dup = total = 0
    for ci in range(len(centroids)):
        sets = [m[ci] for m in members]
        for r, s in enumerate(sets):
            others = set().union(*(o for q, o in enumerate(sets) if q != r))
            dup += len(s & others)
            total += len(s)
    return dup / total if total else 0.0


# ------------------------------------------------------------ interpolation


def interpolation_weights(known_points, query_points):
    """Indices and normalized inverse-squared-distance weights of the 3 nearest known points.

    A query within 1e-10 of a known point gets weight 1 on that point alone.
    """
    known = np.asarray(known_points, dtype=np.float64)
    query = np.asarray(query_points, dtype=np.float64)
    if known.shape[0] < 3:
        raise InvalidArgument(f"need at least 3 known points, got {known.shape[0]}")
    d2 = ((query[:, None, :] - known[None, :, :]) ** 2).sum(axis=-1)
    idx = np.argsort(d2, axis=1, kind="stable")[:, :3]
    dist = np.sqrt(np.take_along_axis(d2, idx, axis=1))
    coincident = dist[:, 0] < COINCIDENT_EPS
    with np.errstate(divide="ignore"):
        w = 1.0 / (dist * dist)
    w[coincident] = [1.0, 0.0, 0.0]
    w /= w.sum(axis=1, keepdims=True)
    return idx, w


def interpolate_features(known_points, known_features, query_points):
    """Inverse-squared-distance weighted average of the 3 nearest known features."""
    feats = np.asarray(known_features)
    idx, w = interpolation_weights(known_points, query_points)
    coincident = w[:, 0] == 1.0
    out = np.einsum("qj,qjf->qf", w, feats[idx].astype(np.float64))
    out[coincident] = feats[idx[coincident, 0]]
    return out


# ------------------------------------------------------------------- helpers


def pool_gap(y):
    """Smallest gap between each ring maximum and the next distinct value.

    Exact ties are ignored: they come from duplicated (padded) neighbors or
    all-zero ReLU outputs, which move together under any perturbation.
    """
    top = y.max(axis=-2, keepdims=True)
    below = np.where(y < top, y, -np.inf).max(axis=-2)
    gap = top[..., 0, :] - below
    return float(gap.min()) if gap.size else np.inf


def _scatter_add(target, idx, vals):
    """target[b, idx[b, ...]] += vals[b, ...] for a [B, N, C] target."""
    B, N, C = target.shape
    flat = (idx + (np.arange(B) * N).reshape((B,) + (1,) * (idx.ndim - 1))).ravel()
    np.add.at(target.reshape(B * N, C), flat, vals.reshape(-1, C))


def _gather(arr, idx):
    """arr[b, idx[b, ...]] for a [B, N, C] array."""
    bi = np.arange(arr.shape[0]).reshape((-1,) + (1,) * (idx.ndim - 1))
    return arr[bi, idx]


# ---------------------------------------------------------------------- model


class ACNN:
    """Parameters plus a forward/backward tape for one network config."""

    def __init__(self, config, variant=Variant.FULL, rng=None, dtype=np.float32):
        self.variant = Variant(variant)
        self.base_config = config
        self.config = config.replace_kernels(1) if self.variant == Variant.NO_ANNULAR else config
        for li, layer in enumerate(self.config.layers):
            if layer.is_global and li != len(self.config.layers) - 1:
                raise InvalidArgument("a global layer must be the last encoder layer")
            if layer.kernel - 1 > min([r.k for r in layer.rings] or [layer.kernel]):
                raise InvalidArgument(f"layer {li}: kernel {layer.kernel} too large for ring budget")
        if config.task == "class" and not self.config.layers[-1].is_global:
            raise InvalidArgument("classification needs a final global layer")
        if config.task == "segment":
            for li, layer in enumerate(self.config.layers):
                if layer.centroids == 2:
                    raise InvalidArgument(f"layer {li}: segmentation cannot interpolate from 2 points")
        self.dtype = np.dtype(dtype)
        self.params = {}
        self.buffers = {}
        self.grads = {}
        self._cache = None
        self.track_kinks = False
        self.kink_margin = np.inf
        self._init(rng if rng is not None else np.random.default_rng(0))

    # -- parameters

    def _add_affine(self, name, fan_in, shape, rng):
        bound = 1.0 / np.sqrt(fan_in)
        self.params[f"{name}.w"] = rng.uniform(-bound, bound, size=shape).astype(self.dtype)
        self.params[f"{name}.b"] = np.zeros(shape[-1], self.dtype)

    def _add_bn(self, name, ch):
        self.params[f"{name}.gamma"] = np.ones(ch, self.dtype)
        self.params[f"{name}.beta"] = np.zeros(ch, self.dtype)
        self.buffers[f"{name}.mean"] = np.zeros(ch, np.float32)
        self.buffers[f"{name}.var"] = np.ones(ch, np.float32)

    def _add_chain(self, prefix, cin, widths, ks, rng):
        for j, w in enumerate(widths):
            self._add_affine(f"{prefix}.conv{j}", ks * cin, (ks, cin, w), rng)
            self._add_bn(f"{prefix}.bn{j}", w)
            cin = w

    def _init(self, rng):
        cin = 0
        for li, layer in enumerate(self.config.layers):
            if layer.is_global:
                self._add_chain(f"L{li}.G", 3 + cin, layer.features[0], 1, rng)
            else:
                for ri, widths in enumerate(layer.features):
                    self._add_chain(f"L{li}.R{ri}", 3 + cin, widths, layer.kernel, rng)
            cin = layer.out_channels
        head = self.config.head
        if self.config.task == "class":
            for j, w in enumerate(head.fc):
                self._add_affine(f"fc{j}", cin, (cin, w), rng)
                if head.bn:
                    self._add_bn(f"fcbn{j}", w)
                cin = w
            self._add_affine("out", cin, (cin, head.classes), rng)
        else:
            total = sum(l.out_channels for l in self.config.layers)
            self._add_affine("seg.hidden", total, (total, head.width), rng)
            self._add_bn("seg.bn", head.width)
            self._add_affine("out", head.width, (head.width, head.parts), rng)

    def astype(self, dtype):
        self.dtype = np.dtype(dtype)
        self.params = {k: v.astype(dtype) for k, v in self.params.items()}
        self.buffers = {k: v.astype(dtype) for k, v in self.buffers.items()}
        return self

    def zero_grads(self):
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    # -- building blocks

    def _stats(self, name):
        return numeric.RunningStats(self.buffers[f"{name}.mean"], self.buffers[f"{name}.var"])

    def _chain_forward(self, prefix, x, n, training):
        caches = []
        for j in range(n):
            w, b = self.params[f"{prefix}.conv{j}.w"], self.params[f"{prefix}.conv{j}.b"]
            z = annular.conv_forward_fast(x, w, b)
            y, bn_c = numeric.batch_norm(
                z, self.params[f"{prefix}.bn{j}.gamma"], self.params[f"{prefix}.bn{j}.beta"],
                self._stats(f"{prefix}.bn{j}"), training,
            )
            out, mask = numeric.relu(y)
            self._note_kink(y)
            caches.append((x, bn_c, mask))
            x = out
        return x, caches

    def _note_kink(self, relu_input=None, pooled_from=None):
        """Record how close this forward pass came to a ReLU or max-pool kink."""
        if not self.track_kinks:
            return
        if relu_input is not None:
            self.kink_margin = min(self.kink_margin, float(np.abs(relu_input).min()))
        if pooled_from is not None:
            self.kink_margin = min(self.kink_margin, pool_gap(pooled_from))

    def _chain_backward(self, prefix, caches, g):
        for j in reversed(range(len(caches))):
            x, bn_c, mask = caches[j]
            g = numeric.relu_backward(mask, g)
            g, dgam, dbeta = numeric.batch_norm_backward(bn_c, g)
            self.grads[f"{prefix}.bn{j}.gamma"] += dgam
            self.grads[f"{prefix}.bn{j}.beta"] += dbeta
            g, dw, db = annular.conv_backward_fast(x, self.params[f"{prefix}.conv{j}.w"], g)
            self.grads[f"{prefix}.conv{j}.w"] += dw
            self.grads[f"{prefix}.conv{j}.b"] += db
        return g

    # -- encoder

    def encode(self, xyz, geoms, training):
        """Run the encoder; returns per-level ``(xyz, features)`` and a tape."""
        B = xyz.shape[0]
        feats = None
        levels, tape = [], []
        for li, layer in enumerate(self.config.layers):
            g = geoms[li]
            if layer.is_global:
                x = xyz if feats is None else np.concatenate([xyz, feats], axis=-1)
                y, cc = self._chain_forward(f"L{li}.G", x[:, None], len(layer.features[0]), training)
                pooled, arg = annular.ring_max_pool(y)
                self._note_kink(pooled_from=y)
                tape.append(("global", y.shape, cc, arg, feats is not None))
                xyz_out = np.zeros((B, 1, 3), dtype=xyz.dtype)
                feats = pooled
            else:
                cxyz = _gather(xyz, g.centroids)
                outs, ring_tape = [], []
                for ri, nbr in enumerate(g.rings):
                    rel = _gather(xyz, nbr) - cxyz[:, :, None, :]
                    x = rel if feats is None else np.concatenate([rel, _gather(feats, nbr)], axis=-1)
                    y, cc = self._chain_forward(f"L{li}.R{ri}", x, len(layer.features[ri]), training)
                    pooled, arg = annular.ring_max_pool(y)
                    self._note_kink(pooled_from=y)
                    outs.append(pooled)
                    ring_tape.append((y.shape, cc, arg))
                in_ch = 0 if feats is None else feats.shape[-1]
                tape.append(("ring", xyz.shape[1], in_ch, ring_tape))
                xyz_out = cxyz
                feats = np.concatenate(outs, axis=-1)
            xyz = xyz_out
            levels.append((xyz, feats))
        return levels, tape

    def encode_backward(self, tape, geoms, d_levels, n_points, need_xyz=False):
        """Backprop through the encoder.

        ``d_levels[i]`` is the gradient for layer i's output features (or
        None). Returns the gradient for the input coordinates when
        ``need_xyz``.
        """
        d_feats = None
        d_xyz_out = None
        for li in reversed(range(len(self.config.layers))):
            layer = self.config.layers[li]
            if d_levels[li] is not None:
                d_feats = d_levels[li] if d_feats is None else d_feats + d_levels[li]
            entry = tape[li]
            if entry[0] == "global":
                _, yshape, cc, arg, has_feats = entry
                g = annular.ring_max_pool_backward(yshape, arg, d_feats)
                dx = self._chain_backward(f"L{li}.G", cc, g)[:, 0]
                d_xyz_out = dx[..., :3]
                d_feats = dx[..., 3:] if has_feats else None
                continue
            _, n_in, in_ch, ring_tape = entry
            geom = geoms[li]
            B, M = geom.centroids.shape
            d_xyz_in = np.zeros((B, n_in, 3), d_feats.dtype) if need_xyz else None
            d_feats_in = np.zeros((B, n_in, in_ch), d_feats.dtype) if in_ch and li > 0 else None
            d_cxyz = d_xyz_out if (need_xyz and d_xyz_out is not None) else (
                np.zeros((B, M, 3), d_feats.dtype) if need_xyz else None)
            off = 0
            for ri, (yshape, cc, arg) in enumerate(ring_tape):
                w = yshape[-1]
                g = annular.ring_max_pool_backward(yshape, arg, d_feats[..., off : off + w])
                off += w
                dx = self._chain_backward(f"L{li}.R{ri}", cc, g)
                nbr = geom.rings[ri]
                if need_xyz:
                    d_rel = dx[..., :3]
                    _scatter_add(d_xyz_in, nbr, d_rel)
                    d_cxyz = d_cxyz - d_rel.sum(axis=2)
                if d_feats_in is not None:
                    _scatter_add(d_feats_in, nbr, dx[..., 3:])
            if need_xyz:
                _scatter_add(d_xyz_in, geom.centroids, d_cxyz)
            d_feats, d_xyz_out = d_feats_in, d_xyz_in
        return d_xyz_out

    # -- heads

    def forward(self, xyz, geoms, training=False, rng=None):
        """Logits ``[B, c]`` (classification) or ``[B, N, m]`` (segmentation)."""
        xyz = np.asarray(xyz, dtype=self.dtype)
        self.kink_margin = np.inf
        levels, tape = self.encode(xyz, geoms, training)
        head = self.config.head
        if self.config.task == "class":
            h = levels[-1][1][:, 0, :]
            hcache = []
            for j in range(len(head.fc)):
                h, dc = numeric.dense(h, self.params[f"fc{j}.w"], self.params[f"fc{j}.b"])
                bc = None
                if head.bn:
                    h, bc = numeric.batch_norm(
                        h, self.params[f"fcbn{j}.gamma"], self.params[f"fcbn{j}.beta"], self._stats(f"fcbn{j}"), training)
                self._note_kink(h)
                h, mask = numeric.relu(h)
                h, keep = numeric.dropout(h, head.dropout, rng, training)
                hcache.append((dc, bc, mask, keep))
            logits, oc = numeric.dense(h, self.params["out.w"], self.params["out.b"])
            self._cache = (tape, geoms, xyz.shape[1], hcache, oc)
            return logits
        ups, interp = [], []
        for lxyz, lfeat in levels:
            if lfeat.shape[1] == 1:
                ups.append(np.broadcast_to(lfeat, (lfeat.shape[0], xyz.shape[1], lfeat.shape[2])))
                interp.append(None)
                continue
            idx_w = [interpolation_weights(lxyz[b], xyz[b]) for b in range(xyz.shape[0])]
            idx = np.stack([iw[0] for iw in idx_w])
            w = np.stack([iw[1] for iw in idx_w]).astype(self.dtype)
            ups.append(np.einsum("bnj,bnjf->bnf", w, _gather(lfeat, idx)))
            interp.append((idx, w, lfeat.shape[1]))
        cat = np.concatenate(ups, axis=-1)
        h, dc1 = numeric.dense(cat, self.params["seg.hidden.w"], self.params["seg.hidden.b"])
        h, bc = numeric.batch_norm(h, self.params["seg.bn.gamma"], self.params["seg.bn.beta"], self._stats("seg.bn"), training)
        self._note_kink(h)
        h, mask = numeric.relu(h)
        logits, oc = numeric.dense(h, self.params["out.w"], self.params["out.b"])
        self._cache = (tape, geoms, xyz.shape[1], (dc1, bc, mask, interp, [u.shape[-1] for u in ups]), oc)
        return logits

    def backward(self, d_logits, need_xyz=False):
        """Accumulate parameter gradients; returns d(loss)/d(xyz) if asked."""
        tape, geoms, n_points, hcache, oc = self._cache
        if not self.grads:
            self.zero_grads()
        d, dw, db = numeric.dense_backward(oc, d_logits, self.params["out.w"])
        self.grads["out.w"] += dw
        self.grads["out.b"] += db
        n_layers = len(self.config.layers)
        d_levels = [None] * n_layers
        if self.config.task == "class":
            for j in reversed(range(len(hcache))):
                dc, bc, mask, keep = hcache[j]
                d = numeric.dropout_backward(keep, d)
                d = numeric.relu_backward(mask, d)
                if bc is not None:
                    d, dg, dbt = numeric.batch_norm_backward(bc, d)
                    self.grads[f"fcbn{j}.gamma"] += dg
                    self.grads[f"fcbn{j}.beta"] += dbt
                d, dw, db = numeric.dense_backward(dc, d, self.params[f"fc{j}.w"])
                self.grads[f"fc{j}.w"] += dw
                self.grads[f"fc{j}.b"] += db
            d_levels[-1] = d[:, None, :]
        else:
            dc1, bc, mask, interp, widths = hcache
            d = numeric.relu_backward(mask, d)
            d, dg, dbt = numeric.batch_norm_backward(bc, d)
            self.grads["seg.bn.gamma"] += dg
            self.grads["seg.bn.beta"] += dbt
            d, dw, db = numeric.dense_backward(dc1, d, self.params["seg.hidden.w"])
            self.grads["seg.hidden.w"] += dw
            self.grads["seg.hidden.b"] += db
            off = 0
            for li, (w_ch, it) in enumerate(zip(widths, interp)):
                du = d[..., off : off + w_ch]
                off += w_ch
                if it is None:
                    d_levels[li] = du.sum(axis=1, keepdims=True)
                    continue
                idx, w, m = it
                target = np.zeros((du.shape[0], m, w_ch), du.dtype)
                _scatter_add(target, idx, w[..., None] * du[:, :, None, :])
                d_levels[li] = target
        return self.encode_backward(tape, geoms, d_levels, n_points, need_xyz)

    # -- persistence

    def state_entries(self):
        entries = {f"param.{k}": v for k, v in self.params.items()}
        entries.update({f"buffer.{k}": v for k, v in self.buffers.items()})
        return entries

    def load_state_entries(self, entries):
        for k in self.params:
            if f"param.{k}" not in entries or entries[f"param.{k}"].shape != self.params[k].shape:
                raise ConfigMismatch(f"checkpoint lacks a compatible tensor for {k}")
            self.params[k] = entries[f"param.{k}"].astype(self.dtype)
        for k in self.buffers:
            if f"buffer.{k}" in entries:
                self.buffers[k] = entries[f"buffer.{k}"].astype(np.float32)


# ------------------------------------------------------------------ checkpoint


@dataclass
class Checkpoint:
    model: ACNN
    class_names: list
    adam: numeric.AdamState | None = None

    def to_entries(self):
        m = self.model
        entries = {
            "meta.config": text_entry(m.base_config.to_text()),
            "meta.variant": text_entry(m.variant.value),
            "meta.classes": text_entry("\n".join(self.class_names)),
        }
        entries.update(m.state_entries())
        if self.adam is not None:
            a = self.adam
            entries["adam.hyper"] = np.array([a.lr, a.beta1, a.beta2, a.eps, a.decay, a.decay_every], np.float32)
            entries["adam.step"] = np.array([a.step], np.float32)
            for k in a.m:
                entries[f"adam.m.{k}"] = a.m[k]
                entries[f"adam.v.{k}"] = a.v[k]
        return entries

    def save(self, path):
        write_checkpoint(path, self.to_entries())

    @classmethod
    def from_entries(cls, entries):
        try:
            config = parse_config(entry_text(entries["meta.config"]))
            variant = Variant(entry_text(entries["meta.variant"]))
            names = entry_text(entries["meta.classes"]).split("\n")
        except KeyError as exc:
            raise ConfigMismatch(f"checkpoint is missing {exc.args[0]}") from None
        model = ACNN(config, variant)
        model.load_state_entries(entries)
        adam = None
        if "adam.hyper" in entries:
            h = entries["adam.hyper"].astype(np.float64)
            adam = numeric.AdamState(float(h[0]), float(h[1]), float(h[2]), float(h[3]), float(h[4]), int(h[5]),
                                     int(entries["adam.step"][0]))
            for k in model.params:
                if f"adam.m.{k}" in entries:
                    adam.m[k] = entries[f"adam.m.{k}"].copy()
                    adam.v[k] = entries[f"adam.v.{k}"].copy()
        return cls(model, names, adam)

    @classmethod
    def load(cls, path):
        return cls.from_entries(read_checkpoint(path))


# ------------------------------------------------------------- data plumbing


def augment(cloud, rng, scale=(0.8, 1.25), shift=0.1, sigma=0.01, clip=0.05):
    """Random isotropic scale, per-axis shift, clipped jitter, then shuffle.

    Normals and labels follow the shuffle but are otherwise untouched.
    """
    s = rng.uniform(scale[0], scale[1])
    t = rng.uniform(-shift, shift, size=3)
    jitter = np.clip(rng.normal(0.0, sigma, size=cloud.points.shape), -clip, clip) if sigma > 0 else 0.0
    perm = rng.permutation(len(cloud))
    pts = (cloud.points * s + t + jitter)[perm]
    return PointCloud(
        pts,
        None if cloud.normals is None else cloud.normals[perm],
        None if cloud.labels is None else cloud.labels[perm],
    )


def confusion(pred, true, c):
    return np.bincount(true.ravel() * c + pred.ravel(), minlength=c * c).reshape(c, c)


def metrics_from_confusion(cm):
    """OA, AAC (mean accuracy over classes present), per-class IoU and mIoU."""
    cm = np.asarray(cm, dtype=np.float64)
    total = cm.sum()
    tp = np.diag(cm)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    oa = tp.sum() / total if total else 0.0
    present = support > 0
    per_acc = np.where(present, tp / np.maximum(support, 1), np.nan)
    aac = float(np.nanmean(per_acc)) if present.any() else 0.0
    union = support + predicted - tp
    iou = np.where(union > 0, tp / np.maximum(union, 1), np.nan)
    miou = float(np.nanmean(iou)) if (union > 0).any() else 0.0
    return {"oa": float(oa), "aac": aac, "per_class_acc": per_acc, "iou": iou, "miou": miou}


@dataclass
class HyperParams:
    epochs: int = 30
    batch_size: int = 16
    lr: float = 0.001
    decay: float = 0.7
    decay_every: int = 20
    augment: bool = True


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    metrics: list  # dicts with epoch, split, loss, oa, aac, miou
    seconds: float = 0.0


def seed_streams(seed):
    """Independent generators: weights init, data order/augmentation, model noise."""
    init, data, noise = np.random.SeedSequence(seed).spawn(3)
    return np.random.default_rng(init), np.random.default_rng(data), np.random.default_rng(noise)


def _targets(dataset, indices, clouds):
    if dataset.task == "class":
        return dataset.labels[indices]
    return np.stack([c.labels for c in clouds])


def _batches(n, size):
    starts = list(range(0, n, size))
    out = [(s, min(s + size, n)) for s in starts]
    if len(out) > 1 and out[-1][1] - out[-1][0] < 2:
        out[-2] = (out[-2][0], n)
        out.pop()
    return out


def predict(model, clouds, batch_size=32, rng=None):
    """Eval-mode logits for a list of clouds."""
    outs = []
    for s, e in _batches(len(clouds), batch_size):
        chunk = clouds[s:e]
        geoms = plan_batch(chunk, model.config, model.variant, rng)
        outs.append(model.forward(np.stack([c.points for c in chunk]), geoms, training=False))
    return np.concatenate(outs)


def evaluate(dataset, checkpoint, rng=None):
    """Overall accuracy, average class accuracy, IoUs and mean loss on a dataset."""
    model = checkpoint.model if isinstance(checkpoint, Checkpoint) else checkpoint
    nout = model.config.num_outputs
    if dataset.task != model.config.task:
        raise ConfigMismatch(f"dataset task {dataset.task} vs checkpoint task {model.config.task}")
    if dataset.num_classes != nout:
        raise ConfigMismatch(f"dataset has {dataset.num_classes} classes, checkpoint predicts {nout}")
    if model.variant == Variant.NO_ORDERING and rng is None:
        rng = np.random.default_rng(0)
    logits = predict(model, dataset.clouds, rng=rng)
    target = _targets(dataset, np.arange(len(dataset)), dataset.clouds)
    loss, _ = numeric.softmax_cross_entropy(logits.astype(np.float64), target)
    res = metrics_from_confusion(confusion(logits.argmax(axis=-1), target, nout))
    res["loss"] = loss
    return res


def train(dataset, config, hp=None, seed=0, variant=Variant.FULL, test_set=None, on_epoch=None):
    """Minibatch Adam on softmax cross-entropy; deterministic in ``seed``."""
    hp = hp or HyperParams()
    if len(dataset) == 0:
        raise InvalidArgument("empty training set")
    if dataset.task != config.task:
        raise ConfigMismatch(f"dataset task {dataset.task} vs config task {config.task}")
    if dataset.num_classes != config.num_outputs:
        raise ConfigMismatch(f"dataset has {dataset.num_classes} classes, config predicts {config.num_outputs}")
    init_rng, data_rng, noise_rng = seed_streams(seed)
    model = ACNN(config, variant, init_rng)
    adam = numeric.AdamState(lr=hp.lr, decay=hp.decay, decay_every=hp.decay_every)
    ckpt = Checkpoint(model, list(dataset.class_names), adam)
    metrics = []
    t0 = time.perf_counter()
    nout = config.num_outputs
    for epoch in range(hp.epochs):
        lr = adam.lr_at(epoch)
        order = data_rng.permutation(len(dataset))
        loss_sum, count = 0.0, 0
        cm = np.zeros((nout, nout), dtype=np.int64)
        for bno, (s, e) in enumerate(_batches(len(order), hp.batch_size)):
            idx = order[s:e]
            clouds = [dataset.clouds[i] for i in idx]
            if hp.augment:
                clouds = [augment(c, data_rng) for c in clouds]
            target = _targets(dataset, idx, clouds)
            geoms = plan_batch(clouds, model.config, variant, noise_rng)
            logits = model.forward(np.stack([c.points for c in clouds]), geoms, training=True, rng=noise_rng)
            loss, d_logits = numeric.softmax_cross_entropy(logits, target)
            if not np.isfinite(loss):
                raise TrainingDiverged(epoch, bno, loss)
            model.zero_grads()
            model.backward(d_logits.astype(model.dtype))
            numeric.adam_step(model.params, model.grads, adam, lr=lr)
            loss_sum += loss * len(idx)
            count += len(idx)
            cm += confusion(logits.argmax(axis=-1), target, nout)
        row = {"epoch": epoch, "split": "train", "loss": loss_sum / count, **_summary(cm, config.task)}
        metrics.append(row)
        if test_set is not None:
            ev = evaluate(test_set, model, rng=np.random.default_rng(seed))
            metrics.append({"epoch": epoch, "split": "test", "loss": ev["loss"], "oa": ev["oa"], "aac": ev["aac"],
                            "miou": ev["miou"] if config.task == "segment" else None})
        if on_epoch is not None:
            on_epoch(metrics[-2:] if test_set is not None else metrics[-1:])
    return TrainResult(ckpt, metrics, time.perf_counter() - t0)


def ablate(train_set, test_set, config, hp=None, seeds=(0, 1, 2, 3, 4), variants=tuple(Variant), on_run=None):
    """Train every variant under every seed; rows of variant, seed, oa, aac.

    A given seed drives the same data order and augmentation for all variants.
    """
    rows = []
    for seed in seeds:
        for variant in variants:
            variant = Variant(variant)
            res = train(train_set, config, hp, seed=seed, variant=variant)
            ev = evaluate(test_set, res.checkpoint, rng=np.random.default_rng(seed))
            row = {"variant": variant.value, "seed": seed, "oa": ev["oa"], "aac": ev["aac"], "seconds": res.seconds}
            rows.append(row)
            if on_run is not None:
                on_run(row)
    return rows


def _summary(cm, task):
    m = metrics_from_confusion(cm)
    return {"oa": m["oa"], "aac": m["aac"], "miou": m["miou"] if task == "segment" else None}


# ---------------------------------------------------------------- saliency


def saliency(cloud, checkpoint, label=None, geoms=None):
    """Per-point norm of d(loss)/d(coordinates), neighborhoods held fixed.

    ``label`` defaults to the predicted class.
    """
    model = checkpoint.model if isinstance(checkpoint, Checkpoint) else checkpoint
    if model.config.task != "class":
        raise ConfigMismatch("saliency is defined for classification checkpoints")
    if geoms is None:
        geoms = stack_geometry([plan_geometry(cloud, model.config, model.variant, np.random.default_rng(0))])
    xyz = cloud.points[None].astype(model.dtype)
    logits = model.forward(xyz, geoms, training=False)
    if label is None:
        label = int(logits[0].argmax())
    _, d = numeric.softmax_cross_entropy(logits, np.array([label]))
    saved = model.grads
    model.grads = {k: np.zeros_like(v) for k, v in model.params.items()}
    try:
        d_xyz = model.backward(d.astype(model.dtype), need_xyz=True)
    finally:
        model.grads = saved
    return np.linalg.norm(d_xyz[0].astype(np.float64), axis=1)
