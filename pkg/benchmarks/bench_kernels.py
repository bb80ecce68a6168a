"""Time the compiled geometry kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--points 1024] [--repeat 5]

Prints one row per kernel: best-of-N seconds for each backend and the speedup.
"""

import argparse
import sys
import timeit

import numpy as np

from acnn import _backend


def cases(n, rng):
    pts = rng.uniform(-1, 1, size=(n, 3))
    cent = np.ascontiguousarray(rng.choice(n, size=n // 4, replace=False).astype(np.int64))
    nrm = rng.normal(size=(len(cent), 3))
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    nbr = np.ascontiguousarray(rng.integers(0, n, size=(len(cent), 16)).astype(np.int64))
    start = np.zeros(len(cent), np.int64)
    centers = np.ascontiguousarray(pts[cent])
    return {
        "fps": lambda k: k.fps(pts, n // 4, 0),
        "ring_search": lambda k: k.ring_search(pts, cent, 0.1, 0.4, 16),
        "angle_keys": lambda k: k.angle_keys(pts, centers, nrm, nbr, start),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", type=int, default=1024)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if _backend.compiled is None:
        print("compiled kernels are not built; only the fallback is timed", file=sys.stderr)
    print("kernel\tpoints\tfallback_s\tcompiled_s\tspeedup")
    for name, fn in cases(args.points, np.random.default_rng(args.seed)).items():
        slow = min(timeit.repeat(lambda: fn(_backend.fallback), number=1, repeat=args.repeat))
        if _backend.compiled is None:
            print(f"{name}\t{args.points}\t{slow:.6f}\t\t")
            continue
        fast = min(timeit.repeat(lambda: fn(_backend.compiled), number=1, repeat=args.repeat))
        print(f"{name}\t{args.points}\t{slow:.6f}\t{fast:.6f}\t{slow / fast:.1f}x")


if __name__ == "__main__":
    main()
