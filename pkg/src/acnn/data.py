"""Synthetic shapes, the ``acnn-pts`` text format and dataset manifests.

``acnn-pts`` grammar::

    acnn-pts 1 <N> <flags>        flags: xyz | xyzn | xyznl
    <N rows of whitespace-separated numbers>
                                  xyz: 3 columns, xyzn: 6, xyznl: 7 (last is an integer label)

Floats are written with 17 significant digits, so a write/read round trip is
exact. ``manifest.tsv`` has the header ``path<TAB>label<TAB>split``; ``label``
is a class index or ``seg``, paths are relative to the manifest directory.
Class names live one per line in ``classes.txt`` next to it.
"""

import os
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import atomic_write_bytes
from .errors import InvalidArgument, ParseError
from .geometry import PointCloud

SHAPES = ("sphere", "cube", "cylinder", "cone", "torus")
FLAG_COLUMNS = {"xyz": 3, "xyzn": 6, "xyznl": 7}
MANIFEST = "manifest.tsv"
CLASSES = "classes.txt"


@dataclass
class ShapeSpec:
    kind: str
    n_points: int = 256
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in SHAPES:
            raise InvalidArgument(f"unknown shape {self.kind!r}; choose from {', '.join(SHAPES)}")
        if self.n_points < 32:
            raise InvalidArgument(f"need at least 32 points, got {self.n_points}")
        if any(v <= 0 for v in self.params.values()):
            raise InvalidArgument(f"shape parameters must be positive: {self.params}")


def random_spec(kind, n_points, rng):
    """Shape parameters drawn per instance so each class has some spread."""
    u = rng.uniform
    params = {
        "sphere": lambda: {"radius": u(0.5, 1.0)},
        "cube": lambda: {"side": u(0.8, 1.2)},
        "cylinder": lambda: {"radius": u(0.3, 0.6), "height": u(0.8, 1.6)},
        "cone": lambda: {"radius": u(0.4, 0.8), "height": u(0.8, 1.6)},
        "torus": lambda: {"major": u(0.7, 1.0), "minor": u(0.2, 0.4)},
    }[kind]()
    return ShapeSpec(kind, n_points, params)


def _pick_parts(areas, n, rng):
    p = np.asarray(areas, dtype=np.float64)
    return rng.choice(len(p), size=n, p=p / p.sum())


def _sphere(p, n, rng):
    r = p.get("radius", 1.0)
    v = rng.normal(size=(n, 3))
    nrm = v / np.linalg.norm(v, axis=1, keepdims=True)
    return r * nrm, nrm, r


def _cube(p, n, rng):
    a = p.get("side", 1.0)
    face = rng.integers(0, 6, size=n)
    axis, sign = face // 2, np.where(face % 2 == 0, 1.0, -1.0)
    pts = rng.uniform(-a / 2, a / 2, size=(n, 3))
    rows = np.arange(n)
    pts[rows, axis] = sign * a / 2
    nrm = np.zeros((n, 3))
    nrm[rows, axis] = sign
    return pts, nrm, a * np.sqrt(3) / 2


def _cylinder(p, n, rng, with_labels=False):
    r, h = p.get("radius", 0.5), p.get("height", 1.0)
    part = _pick_parts([2 * np.pi * r * h, np.pi * r * r, np.pi * r * r], n, rng)
    phi = rng.uniform(0, 2 * np.pi, size=n)
    rho = np.where(part == 0, r, r * np.sqrt(rng.uniform(size=n)))
    z = np.select([part == 0, part == 1], [rng.uniform(-h / 2, h / 2, size=n), h / 2], -h / 2)
    pts = np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=1)
    nrm = np.zeros((n, 3))
    side = part == 0
    nrm[side, 0] = np.cos(phi[side])
    nrm[side, 1] = np.sin(phi[side])
    nrm[part == 1, 2] = 1.0
    nrm[part == 2, 2] = -1.0
    bound = np.hypot(r, h / 2)
    if with_labels:
        return pts, nrm, bound, (part > 0).astype(np.int64)
    return pts, nrm, bound


def _cone(p, n, rng):
    r, h = p.get("radius", 0.5), p.get("height", 1.0)
    slant = np.hypot(r, h)
    part = _pick_parts([np.pi * r * slant, np.pi * r * r], n, rng)
    phi = rng.uniform(0, 2 * np.pi, size=n)
    frac = np.sqrt(rng.uniform(size=n))  # lateral area grows linearly with distance from apex
    lateral = part == 0
    rho = np.where(lateral, frac * r, r * frac)
    z = np.where(lateral, h / 2 - frac * h, -h / 2)
    pts = np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=1)
    nrm = np.zeros((n, 3))
    nrm[lateral] = np.stack([h * np.cos(phi), h * np.sin(phi), np.full(n, r)], axis=1)[lateral] / slant
    nrm[~lateral, 2] = -1.0
    return pts, nrm, max(np.hypot(r, h / 2), h / 2)


def _torus(p, n, rng):
    R, r = p.get("major", 1.0), p.get("minor", 0.3)
    if r >= R:
        raise InvalidArgument("torus needs minor < major radius")
    u = np.empty(0)
    v = np.empty(0)
    while u.size < n:
        uu = rng.uniform(0, 2 * np.pi, size=2 * n)
        vv = rng.uniform(0, 2 * np.pi, size=2 * n)
        keep = rng.uniform(size=2 * n) < (R + r * np.cos(vv)) / (R + r)
        u = np.concatenate([u, uu[keep]])
        v = np.concatenate([v, vv[keep]])
    u, v = u[:n], v[:n]
    nrm = np.stack([np.cos(v) * np.cos(u), np.cos(v) * np.sin(u), np.sin(v)], axis=1)
    pts = np.stack([(R + r * np.cos(v)) * np.cos(u), (R + r * np.cos(v)) * np.sin(u), r * np.sin(v)], axis=1)
    return pts, nrm, R + r


_GENERATORS = {"sphere": _sphere, "cube": _cube, "cylinder": _cylinder, "cone": _cone, "torus": _torus}


def _finish(pts, nrm, bound, normalize, rotate, rng, labels=None):
    if rotate:
        a = rng.uniform(0, 2 * np.pi)
        c, s = np.cos(a), np.sin(a)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        pts, nrm = pts @ rot.T, nrm @ rot.T
    if normalize:
        pts = pts / bound
    nrm = nrm / np.linalg.norm(nrm, axis=1, keepdims=True)
    return PointCloud(pts, nrm, labels)


def generate_shape(spec, rng, normalize=True, rotate=False):
    """Uniform surface sample with analytic normals.

    Shapes are built centered at the origin; with ``normalize`` they are
    divided by their analytic bounding radius so they fit the unit sphere.
    ``rotate`` spins the shape by a random angle about z.
    """
    pts, nrm, bound = _GENERATORS[spec.kind](spec.params, spec.n_points, rng)
    return _finish(pts, nrm, bound, normalize, rotate, rng)


def generate_segmented_cylinder(spec, rng, normalize=True, rotate=False):
    """Cylinder with per-point labels 0 = side, 1 = caps."""
    if spec.kind != "cylinder":
        raise InvalidArgument("segmented generation needs a cylinder spec")
    pts, nrm, bound, labels = _cylinder(spec.params, spec.n_points, rng, with_labels=True)
    return _finish(pts, nrm, bound, normalize, rotate, rng, labels)


def format_pts(cloud, flags=None):
    if flags is None:
        flags = "xyz" if cloud.normals is None else ("xyzn" if cloud.labels is None else "xyznl")
    if flags not in FLAG_COLUMNS:
        raise InvalidArgument(f"unknown flags {flags!r}")
    cols = [cloud.points]
    if flags in ("xyzn", "xyznl"):
        if cloud.normals is None:
            raise InvalidArgument(f"flags {flags} need normals")
        cols.append(cloud.normals)
    lines = [f"acnn-pts 1 {len(cloud)} {flags}"]
    body = np.concatenate(cols, axis=1)
    if flags == "xyznl":
        if cloud.labels is None:
            raise InvalidArgument("flags xyznl need labels")
        for row, lab in zip(body, cloud.labels):
            lines.append(" ".join(f"{v:.17g}" for v in row) + f" {int(lab)}")
    else:
        lines.extend(" ".join(f"{v:.17g}" for v in row) for row in body)
    return "\n".join(lines) + "\n"


def write_pts(path, cloud, flags=None):
    atomic_write_bytes(path, format_pts(cloud, flags).encode("ascii"))


def parse_pts(text, path=None):
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise ParseError("empty file, expected 'acnn-pts 1 <N> <flags>' header", 1, path)
    head = lines[0].split()
    if len(head) != 4 or head[0] != "acnn-pts" or head[1] != "1":
        raise ParseError(f"bad header {lines[0]!r}", 1, path)
    try:
        n = int(head[2])
    except ValueError:
        raise ParseError(f"bad point count {head[2]!r}", 1, path) from None
    flags = head[3]
    if flags not in FLAG_COLUMNS or n < 1:
        raise ParseError(f"bad header {lines[0]!r}", 1, path)
    ncol = FLAG_COLUMNS[flags]
    rows = [(i, ln) for i, ln in enumerate(lines[1:], 2) if ln.strip()]
    if len(rows) != n:
        raise ParseError(f"header declares {n} rows, found {len(rows)}", len(lines), path)
    data = np.empty((n, ncol))
    for r, (lineno, ln) in enumerate(rows):
        parts = ln.split()
        if len(parts) != ncol:
            raise ParseError(f"expected {ncol} columns for {flags}, got {len(parts)}", lineno, path)
        try:
            data[r] = [float(v) for v in parts]
        except ValueError:
            raise ParseError(f"non-numeric value in row: {ln.strip()!r}", lineno, path) from None
        if flags == "xyznl" and not float(parts[6]).is_integer():
            raise ParseError(f"label must be an integer, got {parts[6]!r}", lineno, path)
    normals = data[:, 3:6] if ncol >= 6 else None
    labels = data[:, 6].astype(np.int64) if ncol == 7 else None
    try:
        return PointCloud(data[:, :3], normals, labels)
    except (ValueError, InvalidArgument) as exc:
        raise ParseError(str(exc), None, path) from exc


def read_pts(path):
    with open(path, encoding="ascii") as fh:
        return parse_pts(fh.read(), path)


@dataclass
class Dataset:
    """Clouds of one split. ``labels`` is per cloud (class task) or None (seg)."""

    clouds: list
    labels: np.ndarray | None
    class_names: list
    paths: list = field(default_factory=list)

    @property
    def task(self):
        return "class" if self.labels is not None else "segment"

    @property
    def num_classes(self):
        return len(self.class_names)

    def __len__(self):
        return len(self.clouds)


def write_manifest(root, entries, class_names):
    lines = ["path\tlabel\tsplit"] + [f"{p}\t{lab}\t{split}" for p, lab, split in entries]
    atomic_write_bytes(os.path.join(root, MANIFEST), ("\n".join(lines) + "\n").encode("utf-8"))
    atomic_write_bytes(os.path.join(root, CLASSES), ("\n".join(class_names) + "\n").encode("utf-8"))


def read_manifest(root):
    """Parse ``manifest.tsv``; returns ``(entries, class_names)``.

    Rejects duplicate paths, labels outside [0, c) and missing files.
    """
    mpath = os.path.join(root, MANIFEST)
    with open(os.path.join(root, CLASSES), encoding="utf-8") as fh:
        class_names = [ln.strip() for ln in fh if ln.strip()]
    with open(mpath, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].split("\t") != ["path", "label", "split"]:
        raise ParseError("manifest header must be 'path\\tlabel\\tsplit'", 1, mpath)
    entries, seen = [], set()
    for lineno, ln in enumerate(lines[1:], 2):
        if not ln.strip():
            continue
        parts = ln.split("\t")
        if len(parts) != 3:
            raise ParseError("expected 3 tab-separated columns", lineno, mpath)
        path, label, split = parts
        if path in seen:
            raise ParseError(f"duplicate path {path!r}", lineno, mpath)
        seen.add(path)
        if split not in ("train", "test"):
            raise ParseError(f"split must be train or test, got {split!r}", lineno, mpath)
        if label != "seg":
            try:
                lab = int(label)
            except ValueError:
                raise ParseError(f"bad label {label!r}", lineno, mpath) from None
            if not 0 <= lab < len(class_names):
                raise ParseError(f"label {lab} outside [0, {len(class_names)})", lineno, mpath)
            label = lab
        if not os.path.exists(os.path.join(root, path)):
            raise ParseError(f"missing file {path!r}", lineno, mpath)
        entries.append((path, label, split))
    return entries, class_names


def load_split(root, split):
    entries, class_names = read_manifest(root)
    picked = [e for e in entries if e[2] == split]
    clouds = [read_pts(os.path.join(root, p)) for p, _, _ in picked]
    labels = [lab for _, lab, _ in picked]
    if labels and all(lab == "seg" for lab in labels):
        return Dataset(clouds, None, class_names, [p for p, _, _ in picked])
    if any(lab == "seg" for lab in labels):
        raise ParseError(f"split {split!r} mixes class and seg entries", None, root)
    return Dataset(clouds, np.asarray(labels, dtype=np.int64), class_names, [p for p, _, _ in picked])


def generate_dataset(root, classes=SHAPES, per_class=100, test_per_class=30, points=256, seed=0, segmented=False):
    """Write a synthetic dataset tree plus manifest; deterministic in ``seed``."""
    classes = list(classes)
    for name in classes:
        if name not in SHAPES:
            raise InvalidArgument(f"unknown shape class {name!r}")
    rng = np.random.default_rng(seed)
    entries = []
    for split, count in (("train", per_class), ("test", test_per_class)):
        os.makedirs(os.path.join(root, split), exist_ok=True)
        if segmented:
            for i in range(count):
                spec = random_spec("cylinder", points, rng)
                cloud = generate_segmented_cylinder(spec, rng, rotate=True)
                rel = f"{split}/cylinder_{i:04d}.pts"
                write_pts(os.path.join(root, rel), cloud, "xyznl")
                entries.append((rel, "seg", split))
            continue
        for label, name in enumerate(classes):
            for i in range(count):
                cloud = generate_shape(random_spec(name, points, rng), rng, rotate=True)
                rel = f"{split}/{name}_{i:04d}.pts"
                write_pts(os.path.join(root, rel), cloud, "xyzn")
                entries.append((rel, label, split))
    names = ["side", "caps"] if segmented else classes
    write_manifest(root, entries, names)
    return entries
