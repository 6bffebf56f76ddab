"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat 3]
"""
import argparse
import time

import numpy as np

from graspd.mesh import icosphere
from graspd.sdf import bake, grid_from_function
from graspd.sdf._kernels import trilinear
from graspd.sim import ContactParams, object_state, simulate


def best_of(fn, repeat):
    fn()  # warm up (numba compiles on first call)
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    grid = grid_from_function(lambda q: np.linalg.norm(q, axis=-1) - 0.03, [-0.05] * 3, [0.05] * 3, 64)
    rng = np.random.default_rng(0)
    pts = rng.uniform(-0.06, 0.06, (100_000, 3))
    mesh = icosphere(0.03, 3)
    state = object_state(grid)
    d = rng.normal(size=(280, 3))
    hand = d / np.linalg.norm(d, axis=1, keepdims=True) * 0.0299
    ext = np.array([0.0, 0.0, -9.8 * state.mass, 0.0, 0.0, 0.0])
    params = ContactParams()

    cases = {
        "trilinear 100k points": lambda nb: trilinear(grid.values, grid.lo, grid.spacing, pts, True, use_numba=nb),
        "bake icosphere 32^3": lambda nb: bake(mesh, 32, 0.01, use_numba=nb),
        "simulate 5k steps, 280 points": lambda nb: simulate(hand, grid, state, ext, params, 5000, use_numba=nb),
    }
    print(f"{'kernel':34s} {'numba s':>10s} {'numpy s':>10s} {'speedup':>8s}")
    for name, fn in cases.items():
        a = best_of(lambda: fn(True), args.repeat)
        b = best_of(lambda: fn(False), args.repeat)
        print(f"{name:34s} {a:10.4f} {b:10.4f} {b / a:8.1f}")


if __name__ == "__main__":
    main()
