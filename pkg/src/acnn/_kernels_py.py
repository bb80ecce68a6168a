"""Pure numpy implementations of the geometry hot loops.

These mirror ``_kernels.pyx`` operation for operation (same arithmetic order,
same tie-breaks) so the two backends return identical results.
"""

import numpy as np

DEGENERATE_EPS = 1e-12


def _sqdist(points, q):
    dx = points[..., 0] - q[..., 0]
    dy = points[..., 1] - q[..., 1]
    dz = points[..., 2] - q[..., 2]
    return dx * dx + dy * dy + dz * dz


def fps(points, m, seed):
    n = points.shape[0]
    out = np.empty(m, dtype=np.int64)
    mind = np.full(n, np.inf)
    cur = seed
    for s in range(m):
        out[s] = cur
        mind[cur] = -1.0
        if s == m - 1:
            break
        d = _sqdist(points, points[cur])
        live = mind >= 0.0
        np.minimum(mind, d, out=mind, where=live)
        cur = int(np.argmax(mind))
    return out


def ring_search(points, centroids, r_inner, r_outer, k):
    n = points.shape[0]
    q = points[centroids][:, None, :]
    d = np.sqrt(_sqdist(points[None, :, :], q))
    ok = (d > r_inner) & (d <= r_outer)
    ok[np.arange(len(centroids)), centroids] = False
    key = np.where(ok, d, np.inf)
    ar = np.broadcast_to(np.arange(n), key.shape)
    order = np.lexsort((ar, key), axis=-1)[:, :k]
    count = np.minimum(ok.sum(axis=1), k).astype(np.int64)
    idx = order.astype(np.int64)
    if idx.shape[1] < k:
        idx = np.concatenate([idx, np.zeros((len(centroids), k - idx.shape[1]), np.int64)], axis=1)
    pos = np.arange(k)[None, :]
    fill = np.where(count > 0, idx[:, 0], centroids)[:, None]
    idx = np.where(pos < count[:, None], idx, fill)
    return idx, count


def angle_keys(points, centers, normals, nbr, start):
    m, k = nbr.shape
    x = points[nbr]
    wx = x[..., 0] - centers[:, None, 0]
    wy = x[..., 1] - centers[:, None, 1]
    wz = x[..., 2] - centers[:, None, 2]
    nx = normals[:, None, 0]
    ny = normals[:, None, 1]
    nz = normals[:, None, 2]
    h = wx * nx + wy * ny + wz * nz
    vx = wx - h * nx
    vy = wy - h * ny
    vz = wz - h * nz
    vn = np.sqrt(vx * vx + vy * vy + vz * vz)
    degen = vn < DEGENERATE_EPS

    rows = np.arange(m)
    ref = np.full(m, -1, dtype=np.int64)
    for step in range(k):
        pos = (start + step) % k
        take = (ref < 0) & ~degen[rows, pos]
        ref[take] = pos[take]
    has_ref = ref >= 0
    rsafe = np.where(has_ref, ref, 0)
    cx = vx[rows, rsafe][:, None]
    cy = vy[rows, rsafe][:, None]
    cz = vz[rows, rsafe][:, None]
    cn = vn[rows, rsafe][:, None]

    with np.errstate(invalid="ignore", divide="ignore"):
        cos = (cx * vx + cy * vy + cz * vz) / (cn * vn)
    cos = np.minimum(np.maximum(cos, -1.0), 1.0)
    sx = cy * vz - cz * vy
    sy = cz * vx - cx * vz
    sz = cx * vy - cy * vx
    sign = sx * nx + sy * ny + sz * nz
    keys = np.where(sign < 0.0, -cos - 2.0, cos)
    keys = np.where(degen | ~has_ref[:, None], 1.0, keys)
    return keys
