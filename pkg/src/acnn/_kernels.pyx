# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled geometry kernels.

Arithmetic order and tie-breaks match ``_kernels_py`` exactly; build with
``-ffp-contract=off`` so the compiler does not fuse multiply-adds.
"""

import numpy as np

from libc.math cimport sqrt, INFINITY

cdef double DEGENERATE_EPS = 1e-12


def fps(const double[:, ::1] points, Py_ssize_t m, Py_ssize_t seed):
    cdef Py_ssize_t n = points.shape[0]
    out = np.empty(m, dtype=np.int64)
    mind_arr = np.full(n, np.inf)
    cdef long long[::1] o = out
    cdef double[::1] mind = mind_arr
    cdef Py_ssize_t s, i, cur = seed, best
    cdef double qx, qy, qz, dx, dy, dz, d, bestd
    with nogil:
        for s in range(m):
            o[s] = cur
            mind[cur] = -1.0
            if s == m - 1:
                break
            qx = points[cur, 0]
            qy = points[cur, 1]
            qz = points[cur, 2]
            best = -1
            bestd = -INFINITY
            for i in range(n):
                if mind[i] >= 0.0:
                    dx = points[i, 0] - qx
                    dy = points[i, 1] - qy
                    dz = points[i, 2] - qz
                    d = dx * dx + dy * dy + dz * dz
                    if d < mind[i]:
                        mind[i] = d
                if mind[i] > bestd:
                    bestd = mind[i]
                    best = i
            cur = best
    return out


def ring_search(const double[:, ::1] points, const long long[::1] centroids,
                double r_inner, double r_outer, Py_ssize_t k):
    cdef Py_ssize_t n = points.shape[0], m = centroids.shape[0]
    idx_arr = np.empty((m, k), dtype=np.int64)
    cnt_arr = np.empty(m, dtype=np.int64)
    dbuf_arr = np.empty(k, dtype=np.float64)
    cdef long long[:, ::1] idx = idx_arr
    cdef long long[::1] cnt = cnt_arr
    cdef double[::1] dbuf = dbuf_arr
    cdef Py_ssize_t a, i, j, c, filled
    cdef double qx, qy, qz, dx, dy, dz, d
    with nogil:
        for a in range(m):
            c = centroids[a]
            qx = points[c, 0]
            qy = points[c, 1]
            qz = points[c, 2]
            filled = 0
            for i in range(n):
                if i == c:
                    continue
                dx = points[i, 0] - qx
                dy = points[i, 1] - qy
                dz = points[i, 2] - qz
                d = sqrt(dx * dx + dy * dy + dz * dz)
                if not (d > r_inner and d <= r_outer):
                    continue
                # insertion into the sorted top-k buffer; ascending i makes
                # strict comparison keep the smaller index first on ties
                if filled == k and d >= dbuf[k - 1]:
                    continue
                j = filled if filled < k else k - 1
                while j > 0 and dbuf[j - 1] > d:
                    dbuf[j] = dbuf[j - 1]
                    idx[a, j] = idx[a, j - 1]
                    j -= 1
                dbuf[j] = d
                idx[a, j] = i
                if filled < k:
                    filled += 1
            cnt[a] = filled
            for j in range(filled, k):
                idx[a, j] = idx[a, 0] if filled > 0 else c
    return idx_arr, cnt_arr


def angle_keys(const double[:, ::1] points, const double[:, ::1] centers,
               const double[:, ::1] normals, const long long[:, ::1] nbr,
               const long long[::1] start):
    cdef Py_ssize_t m = nbr.shape[0], k = nbr.shape[1]
    keys_arr = np.empty((m, k), dtype=np.float64)
    v_arr = np.empty((k, 4), dtype=np.float64)
    cdef double[:, ::1] keys = keys_arr
    cdef double[:, ::1] v = v_arr
    cdef Py_ssize_t a, j, step, pos, ref
    cdef double nx, ny, nz, wx, wy, wz, h, cx, cy, cz, cn, cosv, sx, sy, sz, sgn
    with nogil:
        for a in range(m):
            nx = normals[a, 0]
            ny = normals[a, 1]
            nz = normals[a, 2]
            for j in range(k):
                wx = points[nbr[a, j], 0] - centers[a, 0]
                wy = points[nbr[a, j], 1] - centers[a, 1]
                wz = points[nbr[a, j], 2] - centers[a, 2]
                h = wx * nx + wy * ny + wz * nz
                v[j, 0] = wx - h * nx
                v[j, 1] = wy - h * ny
                v[j, 2] = wz - h * nz
                v[j, 3] = sqrt(v[j, 0] * v[j, 0] + v[j, 1] * v[j, 1] + v[j, 2] * v[j, 2])
            ref = -1
            for step in range(k):
                pos = (start[a] + step) % k
                if not (v[pos, 3] < DEGENERATE_EPS):
                    ref = pos
                    break
            if ref < 0:
                for j in range(k):
                    keys[a, j] = 1.0
                continue
            cx = v[ref, 0]
            cy = v[ref, 1]
            cz = v[ref, 2]
            cn = v[ref, 3]
            for j in range(k):
                if v[j, 3] < DEGENERATE_EPS:
                    keys[a, j] = 1.0
                    continue
                cosv = (cx * v[j, 0] + cy * v[j, 1] + cz * v[j, 2]) / (cn * v[j, 3])
                if cosv > 1.0:
                    cosv = 1.0
                if cosv < -1.0:
                    cosv = -1.0
                sx = cy * v[j, 2] - cz * v[j, 1]
                sy = cz * v[j, 0] - cx * v[j, 2]
                sz = cx * v[j, 1] - cy * v[j, 0]
                sgn = sx * nx + sy * ny + sz * nz
                if sgn < 0.0:
                    keys[a, j] = -cosv - 2.0
                else:
                    keys[a, j] = cosv
    return keys_arr
