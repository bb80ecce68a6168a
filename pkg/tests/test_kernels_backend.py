import os
import subprocess
import sys

import numpy as np
import pytest

from acnn import _backend

compiled = _backend.compiled
fallback = _backend.fallback
needs_compiled = pytest.mark.skipif(compiled is None, reason="extension not built")


def _cloud(rng):
    n = int(rng.integers(2, 200))
    pts = rng.uniform(-1, 1, size=(n, 3))
    if rng.random() < 0.3:  # exact duplicates and grid ties
        pts = np.round(pts * 4) / 4
    return pts


@needs_compiled
def test_fps_bitwise_equal():
    rng = np.random.default_rng(0)
    for _ in range(100):
        pts = _cloud(rng)
        m = int(rng.integers(1, len(pts) + 1))
        s = int(rng.integers(0, len(pts)))
        assert np.array_equal(compiled.fps(pts, m, s), fallback.fps(pts, m, s))


@needs_compiled
def test_ring_search_bitwise_equal():
    rng = np.random.default_rng(1)
    for _ in range(100):
        pts = _cloud(rng)
        cent = rng.integers(0, len(pts), size=int(rng.integers(1, 20)))
        r_in = float(rng.uniform(0, 0.5))
        r_out = r_in + float(rng.uniform(0.1, 1.0))
        k = int(rng.integers(1, 20))
        a = compiled.ring_search(pts, cent, r_in, r_out, k)
        b = fallback.ring_search(pts, cent, r_in, r_out, k)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


@needs_compiled
def test_angle_keys_bitwise_equal():
    rng = np.random.default_rng(2)
    for _ in range(100):
        pts = _cloud(rng)
        m, k = int(rng.integers(1, 10)), int(rng.integers(1, 12))
        centers = rng.normal(size=(m, 3))
        if rng.random() < 0.3:
            centers = pts[rng.integers(0, len(pts), size=m)]
        normals = rng.normal(size=(m, 3))
        normals /= np.linalg.norm(normals, axis=1, keepdims=True)
        nbr = rng.integers(0, len(pts), size=(m, k))
        start = rng.integers(0, k, size=m)
        a = compiled.angle_keys(pts, centers, normals, nbr, start)
        b = fallback.angle_keys(pts, centers, normals, nbr, start)
        assert np.array_equal(a, b)


@pytest.mark.parametrize("choice,expected", [("python", "python"), ("auto", None)])
def test_env_selects_backend(choice, expected):
    env = dict(os.environ, ACNN_BACKEND=choice)
    out = subprocess.run([sys.executable, "-c", "import acnn; print(acnn.backend)"], env=env,
                         capture_output=True, text=True, check=True).stdout.strip()
    assert out == (expected or ("compiled" if compiled is not None else "python"))
