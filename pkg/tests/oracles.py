"""Independent brute-force references. Deliberately slow and loop-based; they
share no code with the implementations they check."""

import math

import numpy as np


def fps_oracle(points, m, seed):
    """Greedy max-min sampling with plain lists; strict > keeps the lowest index on ties."""
    pts = [tuple(p) for p in np.asarray(points, dtype=float)]
    chosen = [seed]
    mind = [math.dist(p, pts[seed]) for p in pts]
    while len(chosen) < m:
        best, best_d = None, -1.0
        for i, d in enumerate(mind):
            if i not in chosen and d > best_d:
                best, best_d = i, d
        chosen.append(best)
        mind = [min(d, math.dist(p, pts[best])) for d, p in zip(mind, pts)]
    return chosen


def ring_oracle(points, centroid, r_inner, r_outer, k):
    pts = np.asarray(points, dtype=float)
    q = tuple(pts[centroid])
    found = []
    for i, p in enumerate(pts):
        if i == centroid:
            continue
        d = math.dist(tuple(p), q)
        if r_inner < d <= r_outer:
            found.append((d, i))
    found.sort()
    idx = [i for _, i in found[:k]]
    if not idx:
        return [centroid] * k, 0
    count = len(idx)
    return idx + [idx[0]] * (k - count), count


def tangent_angles(points, q, n, ref_point):
    """Counterclockwise angle about n of each point's projection, measured from
    the projection of ref_point, via atan2 in an explicit tangent frame."""
    n = np.asarray(n, dtype=float)
    q = np.asarray(q, dtype=float)

    def proj(x):
        w = np.asarray(x, dtype=float) - q
        return w - np.dot(w, n) * n

    e1 = proj(ref_point)
    e1 = e1 / np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    out = []
    for x in points:
        v = proj(x)
        a = math.atan2(float(np.dot(v, e2)), float(np.dot(v, e1))) % (2 * math.pi)
        out.append(0.0 if a < 1e-9 or a > 2 * math.pi - 1e-9 else a)
    return out


def atan2_order(neighbors, points, q, n, start, clockwise=False):
    ang = tangent_angles([points[i] for i in neighbors], q, n, points[neighbors[start]])
    if clockwise:
        ang = [(2 * math.pi - a) if a else 0.0 for a in ang]
    return [i for _, i in sorted(zip(ang, neighbors))]


def is_rotation(a, b):
    a, b = list(a), list(b)
    if len(a) != len(b):
        return False
    if not a:
        return True
    doubled = a + a
    return any(doubled[s : s + len(b)] == b for s in range(len(a)))


def rotation_offset(a, b):
    """s such that b == a[s:] + a[:s], or None."""
    for s in range(len(a)):
        if list(a[s:]) + list(a[:s]) == list(b):
            return s
    return None


def direct_conv(rows, weights, bias):
    """Plain (non-circular) valid 1-D convolution over an already-extended array."""
    rows = np.asarray(rows, dtype=float)
    ks, fin, fout = weights.shape
    n_out = rows.shape[0] - ks + 1
    out = np.zeros((n_out, fout))
    for i in range(n_out):
        for o in range(fout):
            acc = bias[o]
            for t in range(ks):
                for c in range(fin):
                    acc += rows[i + t, c] * weights[t, c, o]
            out[i, o] = acc
    return out


def central_difference(f, x, h=1e-5):
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def eig_normal(offsets):
    """Smallest-eigenvalue eigenvector of the scatter matrix via numpy.linalg.eig
    (general solver, not the symmetric one the implementation uses)."""
    c = np.zeros((3, 3))
    for v in offsets:
        c += np.outer(v, v)
    c /= len(offsets)
    vals, vecs = np.linalg.eig(c)
    v = np.real(vecs[:, np.argmin(np.real(vals))])
    return v / np.linalg.norm(v)


def confusion_oracle(pred, true, c):
    m = [[0] * c for _ in range(c)]
    for p, t in zip(pred, true):
        m[t][p] += 1
    oa = sum(m[i][i] for i in range(c)) / len(pred)
    accs = [m[i][i] / sum(m[i]) for i in range(c) if sum(m[i])]
    ious = []
    for i in range(c):
        tp = m[i][i]
        fp = sum(m[j][i] for j in range(c)) - tp
        fn = sum(m[i]) - tp
        if tp + fp + fn:
            ious.append(tp / (tp + fp + fn))
    return oa, sum(accs) / len(accs), ious
