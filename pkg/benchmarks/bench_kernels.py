"""Time the compiled and numpy kernel backends on identical inputs.

Usage::

    python benchmarks/bench_kernels.py [--dims 64 64 64] [--atlas 29] [--repeat 3]

Prints one row per kernel with the best-of-``repeat`` wall time of each
backend, the speedup and the largest absolute difference between their
outputs.
"""

import argparse
import time

import numpy as np

from spinecarve import grid
from spinecarve.kernels import BACKENDS, atlas_sqdist, atlas_weighted_sum, interface_distance, squared_edt


def best_time(fn, repeat):
    best, out = np.inf, None
    for _ in range(repeat):
        start = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - start)
    return best, out


def cases(dims, n_atlas, rng):
    mask = grid.ball(dims, radius=min(dims) / 3) < 0
    mask ^= rng.random(dims) < 0.02
    phi = grid.signed_distance_transform(mask) + 0.3 * rng.standard_normal(dims)
    sign = phi < 0
    valid, offsets, normals = grid._band_feet(phi, sign)
    _, nearest = squared_edt(valid, return_indices=True)
    reach = grid._REFINE_REACH[len(dims)]
    atlas = rng.standard_normal((n_atlas, int(np.prod(dims))))
    flat = phi.ravel()
    weights = rng.random(n_atlas)
    offsets = np.moveaxis(offsets, 0, -1)
    normals = np.moveaxis(normals, 0, -1)
    return {
        "squared_edt": lambda b: squared_edt(mask, backend=b),
        "atlas_sqdist": lambda b: atlas_sqdist(flat, atlas, backend=b),
        "atlas_weighted_sum": lambda b: atlas_weighted_sum(weights, atlas, backend=b),
        "interface_distance": lambda b: interface_distance(offsets, valid, nearest, reach, normals,
                                                           grid.PATCH_RADIUS, backend=b),
    }


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--dims", type=int, nargs="+", default=[64, 64, 64], help="grid extents (2 or 3 values)")
    parser.add_argument("--atlas", type=int, default=29, help="number of atlas fields")
    parser.add_argument("--repeat", type=int, default=3, help="timed repetitions per backend")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    dims = tuple(args.dims)
    rng = np.random.default_rng(args.seed)
    backends = [b for b in ("cython", "python") if b in BACKENDS]
    print(f"dims {dims}, atlas {args.atlas}, backends: {', '.join(backends)}")
    header = f"{'kernel':<20}" + "".join(f"{b + ' [s]':>14}" for b in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}{'max |diff|':>14}"
    print(header)
    for name, fn in cases(dims, args.atlas, rng).items():
        times, outs = [], []
        for b in backends:
            t, out = best_time(lambda: fn(b), args.repeat)
            times.append(t)
            outs.append(out)
        row = f"{name:<20}" + "".join(f"{t:>14.4f}" for t in times)
        if len(backends) == 2:
            diff = float(np.max(np.abs(outs[0] - outs[1])))
            row += f"{times[1] / times[0]:>10.1f}{diff:>14.3e}"
        print(row)


if __name__ == "__main__":
    main()
