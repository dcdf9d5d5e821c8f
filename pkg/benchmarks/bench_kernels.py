"""Compare the compiled and NumPy inner-solver kernels.

Usage::

    python3 benchmarks/bench_kernels.py [--sizes 8,16,32,64,128] [--repeats 50]

For each hull size the separating-plane solve and the plane-velocity solve
run on identical inputs with both backends.  The table lists median wall
times, the speed-up and the largest difference between the two solutions.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from hullsim import _pykernels
from hullsim.barrier import BarrierParams
from hullsim.cli import sphere_hull
from hullsim.contact import init_plane, side_distances
from hullsim.geometry import gjk_distance
from hullsim.kernels import get_backend


def median_time(fn, repeats: int) -> float:
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def plane_inputs(m: int, s: float):
    A = sphere_hull(m)
    B = sphere_hull(m) + np.array([0.0, 0.0, 1.0])
    B[:, 2] += s / (1.0 - s) - gjk_distance(A, B).distance
    g = gjk_distance(A, B)
    return A, B, init_plane(g.witness_a, g.witness_b, s)


def friction_inputs(m: int, rng):
    c = rng.uniform(1e-3, 1e-2, m)
    a = rng.standard_normal((m, 2))
    k = rng.standard_normal((m, 2))
    return c, a, k


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="8,16,32,64,128")
    ap.add_argument("--repeats", type=int, default=50)
    args = ap.parse_args(argv)
    try:
        fast = get_backend("cython")
    except ImportError:
        print("compiled extension not built; run `pip install -e . --no-build-isolation` first")
        return
    slow = _pykernels
    s = BarrierParams().s
    eps = BarrierParams().eps
    rng = np.random.default_rng(0)
    print(f"{'M':>5s} {'plane_py_us':>12s} {'plane_cy_us':>12s} {'speedup':>8s} {'max_diff':>9s}"
          f" {'fric_py_us':>11s} {'fric_cy_us':>11s} {'speedup':>8s} {'max_diff':>9s}")
    for m in [int(v) for v in args.sizes.split(",")]:
        A, B, p0 = plane_inputs(m, s)
        assert np.all(np.concatenate(side_distances(A, B, p0)) > 0)
        tp = median_time(lambda: slow.plane_solve(A, B, p0, s), args.repeats)
        tc = median_time(lambda: fast.plane_solve(A, B, p0, s), args.repeats)
        dp = np.abs(slow.plane_solve(A, B, p0, s)[0] - fast.plane_solve(A, B, p0, s)[0]).max()
        c, a, k = friction_inputs(m, rng)
        w0 = np.zeros(3)
        fp = median_time(lambda: slow.friction_solve(c, a, k, w0, True, eps, 1e-8, 100), args.repeats)
        fc = median_time(lambda: fast.friction_solve(c, a, k, w0, True, eps, 1e-8, 100), args.repeats)
        df = np.abs(slow.friction_solve(c, a, k, w0, True, eps, 1e-8, 100)[0]
                    - fast.friction_solve(c, a, k, w0, True, eps, 1e-8, 100)[0]).max()
        print(f"{m:5d} {1e6 * tp:12.1f} {1e6 * tc:12.1f} {tp / tc:8.1f} {dp:9.1e}"
              f" {1e6 * fp:11.1f} {1e6 * fc:11.1f} {fp / fc:8.1f} {df:9.1e}")


if __name__ == "__main__":
    main()
