"""Compare the compiled and numpy raster kernels.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Inputs match a full-resolution camera (1664x960) and a 60k-point sweep. Each
kernel is timed on both backends and the outputs are checked for bitwise
equality before timings are reported.
"""
import argparse
import json
import sys
import timeit

import numpy as np

from v2xnoise import kernels
from v2xnoise.noise import perspective_homography

W, H = 1664, 960


def cases(rng):
    n = 60_000
    rows = rng.integers(0, H, n)
    cols = rng.integers(0, W, n)
    depth = rng.uniform(1, 80, n)
    valid = rng.random((H, W)) < 0.04
    dmap = np.where(valid, rng.uniform(1, 80, (H, W)), 0.0)
    img = rng.integers(0, 256, (H, W, 3), dtype=np.uint8)
    hinv = np.linalg.inv(perspective_homography(W, H, 0.028))
    return {
        "zbuffer_min": lambda m: m.zbuffer_min(rows, cols, depth, H, W),
        "pool_masked(7)": lambda m: m.pool_masked(dmap, valid, 7, True),
        "warp_bilinear": lambda m: m.warp_bilinear(img, hinv),
    }


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return np.array_equal(a, b)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="write results to this file")
    args = ap.parse_args(argv)

    py = kernels.implementation("python")
    try:
        cy = kernels.implementation("cython")
    except ImportError:
        print("compiled kernels are not built; only the numpy backend is available", file=sys.stderr)
        cy = None

    results = []
    for name, fn in cases(np.random.default_rng(0)).items():
        row = {"kernel": name}
        row["python_s"] = min(timeit.repeat(lambda: fn(py), number=1, repeat=args.repeat))
        if cy is not None:
            if not same(fn(py), fn(cy)):
                print(f"{name}: backends disagree", file=sys.stderr)
                return 1
            row["cython_s"] = min(timeit.repeat(lambda: fn(cy), number=1, repeat=args.repeat))
            row["speedup"] = row["python_s"] / row["cython_s"]
        results.append(row)

    print(f"{'kernel':<16}{'numpy (ms)':>12}{'cython (ms)':>13}{'speedup':>9}")
    for r in results:
        c = f"{r['cython_s'] * 1e3:13.2f}{r['speedup']:8.1f}x" if "cython_s" in r else f"{'-':>13}{'-':>9}"
        print(f"{r['kernel']:<16}{r['python_s'] * 1e3:12.2f}{c}")
    if args.json:
        with open(args.json, "w") as f:
            json.dump(results, f, indent=1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
