"""Spatial primitives: sampling, normals, ring-constrained search and ordering.

All geometry runs in float64. The hot loops (FPS, ring search, angle keys)
dispatch to the compiled backend when it is available.
"""

from dataclasses import dataclass, field

import numpy as np

from ._backend import kernels as _k
from .errors import DegenerateNeighborhood, InvalidArgument, ShapeError

UNIT_TOL = 1e-6


@dataclass
class PointCloud:
    """N points in 3-space with optional unit normals and integer labels."""

    points: np.ndarray
    normals: np.ndarray | None = None
    labels: np.ndarray | None = None

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 1:
            raise ShapeError(f"points must be N x 3 with N >= 1, got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise InvalidArgument("points contain non-finite coordinates")
        self.points = pts
        if self.normals is not None:
            nrm = np.ascontiguousarray(self.normals, dtype=np.float64)
            if nrm.shape != pts.shape:
                raise ShapeError(f"normals shape {nrm.shape} != points shape {pts.shape}")
            if np.any(np.abs(np.linalg.norm(nrm, axis=1) - 1.0) > UNIT_TOL):
                raise InvalidArgument("normals must be unit length")
            self.normals = nrm
        if self.labels is not None:
            lab = np.asarray(self.labels)
            if lab.shape != (pts.shape[0],) or not np.issubdtype(lab.dtype, np.integer):
                raise ShapeError("labels must be N integers")
            self.labels = lab.astype(np.int64)

    def __len__(self):
        return self.points.shape[0]

    def take(self, index):
        """Sub-cloud (or re-indexed cloud) at ``index``."""
        index = np.asarray(index)
        return PointCloud(
            self.points[index],
            None if self.normals is None else self.normals[index],
            None if self.labels is None else self.labels[index],
        )


@dataclass(frozen=True)
class RingSpec:
    r_inner: float
    r_outer: float
    k: int

    def __post_init__(self):
        if not (0.0 <= self.r_inner < self.r_outer):
            raise InvalidArgument(f"ring needs 0 <= r_inner < r_outer, got ({self.r_inner}, {self.r_outer})")
        if int(self.k) != self.k or self.k < 1:
            raise InvalidArgument(f"ring budget k must be a positive integer, got {self.k}")


@dataclass
class Neighborhood:
    centroid: int
    rings: list
    normal: np.ndarray
    counts: list = field(default_factory=list)

    @property
    def empty(self):
        return [c == 0 for c in self.counts]


def _coords(cloud):
    if isinstance(cloud, PointCloud):
        return cloud.points
    return np.ascontiguousarray(cloud, dtype=np.float64)


def _check_index(i, n, what="index"):
    if int(i) != i or not (0 <= i < n):
        raise InvalidArgument(f"{what} {i} out of range [0, {n})")
    return int(i)


def _unit(n):
    n = np.asarray(n, dtype=np.float64).reshape(3)
    if abs(np.linalg.norm(n) - 1.0) > UNIT_TOL:
        raise InvalidArgument(f"normal must be unit length, |n| = {np.linalg.norm(n)}")
    return n


def farthest_point_sampling(cloud, m, seed_index=0):
    """Greedy max-min subsampling starting from ``seed_index``.

    Ties in the max-min distance go to the smallest point index.
    """
    pts = _coords(cloud)
    n = pts.shape[0]
    if int(m) != m or not (1 <= m <= n):
        raise InvalidArgument(f"need 1 <= m <= N={n}, got m={m}")
    seed_index = _check_index(seed_index, n, "seed index")
    return _k.fps(pts, int(m), seed_index)


def knn(cloud, query, k):
    """Plain k nearest neighbors of point ``query`` (itself excluded)."""
    pts = _coords(cloud)
    query = _check_index(query, pts.shape[0], "query")
    return ring_knn_batch(pts, np.array([query]), RingSpec(0.0, np.inf, k))[0][0]


def _sign_normalize(v, tol=1e-12):
    for comp in v:
        if abs(comp) > tol:
            return v if comp > 0 else -v
    return v


def _normal_from_offsets(offsets):
    cov = offsets.T @ offsets / offsets.shape[0]
    evals, evecs = np.linalg.eigh(cov)
    if evals[2] <= 0.0 or evals[1] <= 1e-9 * evals[2]:
        raise DegenerateNeighborhood("neighborhood covariance has rank < 2")
    return _sign_normalize(evecs[:, 0])


def estimate_normal(cloud, query, k_neighbors=10):
    """PCA normal at ``query`` from its k nearest neighbors.

    The covariance is taken about the query point itself, not the neighbor
    mean. Returned sign: first component with magnitude > 1e-12 is positive.
    """
    pts = _coords(cloud)
    if pts.shape[0] < k_neighbors + 1:
        raise InvalidArgument(f"need at least {k_neighbors + 1} points, got {pts.shape[0]}")
    nbr = knn(pts, query, k_neighbors)
    return _normal_from_offsets(pts[nbr] - pts[query])


def estimate_normals(cloud, k_neighbors=10):
    """Normals for every point; raises on the first degenerate neighborhood."""
    pts = _coords(cloud)
    n = pts.shape[0]
    if n < k_neighbors + 1:
        raise InvalidArgument(f"need at least {k_neighbors + 1} points, got {n}")
    nbr, _ = ring_knn_batch(pts, np.arange(n), RingSpec(0.0, np.inf, k_neighbors))
    off = pts[nbr] - pts[:, None, :]
    cov = np.einsum("nki,nkj->nij", off, off) / k_neighbors
    evals, evecs = np.linalg.eigh(cov)
    bad = (evals[:, 2] <= 0.0) | (evals[:, 1] <= 1e-9 * evals[:, 2])
    if np.any(bad):
        raise DegenerateNeighborhood(f"degenerate neighborhood at point {int(np.argmax(bad))}")
    out = evecs[:, :, 0]
    return np.array([_sign_normalize(v) for v in out])


def ring_knn_batch(points, centroids, ring):
    """Ring search for many centroids at once.

    Returns ``(indices, counts)``: an ``M x k`` index array (padded) and the
    number of genuine (pre-padding) neighbors per centroid.
    """
    pts = _coords(points)
    c = np.ascontiguousarray(centroids, dtype=np.int64)
    return _k.ring_search(pts, c, float(ring.r_inner), float(ring.r_outer), int(ring.k))


def ring_knn(cloud, centroid, ring):
    """The ``ring.k`` closest points with distance in (r_inner, r_outer].

    Short rings are padded with their closest member; an empty ring is
    padded with the centroid itself.
    """
    pts = _coords(cloud)
    centroid = _check_index(centroid, pts.shape[0], "centroid")
    idx, _ = ring_knn_batch(pts, np.array([centroid]), ring)
    return idx[0]


def project_to_tangent(points, q, n):
    """Orthogonal projection onto the plane through ``q`` with unit normal ``n``."""
    n = _unit(n)
    q = np.asarray(q, dtype=np.float64).reshape(3)
    x = np.asarray(points, dtype=np.float64)
    h = (x - q) @ n
    return x - h[..., None] * n


def angle_keys_batch(points, centers, normals, nbr, start):
    pts = _coords(points)
    return _k.angle_keys(
        pts,
        np.ascontiguousarray(centers, dtype=np.float64),
        np.ascontiguousarray(normals, dtype=np.float64),
        np.ascontiguousarray(nbr, dtype=np.int64),
        np.ascontiguousarray(start, dtype=np.int64),
    )


def order_batch(points, centers, normals, nbr, start=None, clockwise=False):
    """Order each row of ``nbr`` around its center; rows are independent.

    Clockwise is counterclockwise about the flipped normal, so the reference
    member still comes first.
    """
    nbr = np.ascontiguousarray(nbr, dtype=np.int64)
    if start is None:
        start = np.zeros(nbr.shape[0], dtype=np.int64)
    normals = np.asarray(normals, dtype=np.float64)
    keys = angle_keys_batch(points, centers, -normals if clockwise else normals, nbr, start)
    perm = np.lexsort((nbr, -keys), axis=-1)
    return np.take_along_axis(nbr, perm, axis=-1)


def order_counterclockwise(neighbors, cloud, q, n, start=0, clockwise=False):
    """Sort neighbor indices counterclockwise about ``n`` (clockwise if asked).

    The reference direction is the projection of ``neighbors[start]``. Keys
    are the remapped cosine in (-3, 1], sorted descending; equal keys go to
    the smaller point index.
    """
    nbr = np.asarray(neighbors, dtype=np.int64).reshape(-1)
    if nbr.size == 0:
        raise InvalidArgument("cannot order an empty neighbor list")
    n = _unit(n)
    start = _check_index(start, nbr.size, "start position")
    pts = _coords(cloud)
    q = np.asarray(q, dtype=np.float64).reshape(1, 3)
    return order_batch(pts, q, n[None, :], nbr[None, :], np.array([start]), clockwise)[0]


def build_neighborhood(cloud, centroid, rings, start=0, normal=None):
    """Ring search plus ordering for one centroid, using the cloud's normals."""
    pts = _coords(cloud)
    if normal is None:
        if not isinstance(cloud, PointCloud) or cloud.normals is None:
            raise InvalidArgument("a normal is required for ordering")
        normal = cloud.normals[centroid]
    ordered, counts = [], []
    for ring in rings:
        idx, cnt = ring_knn_batch(pts, np.array([centroid]), ring)
        ordered.append(order_counterclockwise(idx[0], pts, pts[centroid], normal, start))
        counts.append(int(cnt[0]))
    return Neighborhood(int(centroid), ordered, np.asarray(normal, dtype=np.float64), counts)
