"""Benchmark the compiled cell-clipping kernel against the pure-Python twin.

Builds random height fields at several site counts, times both kernels on
identical inputs, and verifies their outputs agree bit for bit. Run as:

    python benchmarks/bench_clip.py
"""

import sys
import time

import numpy as np

from otmesh import init_heights
from otmesh import _pdclip_py
from otmesh.powerdiagram import _neighbor_csr, lower_convex_hull

try:
    from otmesh import _pdclip
except ImportError:
    print("compiled kernel not built; nothing to compare")
    sys.exit(1)


def prepare(n, rng):
    sites = np.ascontiguousarray(rng.uniform(-1, 1, (n, 2)))
    h = init_heights(sites) + 0.05 * rng.standard_normal(n)
    rect = np.array([-1.2, 1.2, -1.2, 1.2])
    _, edges = lower_convex_hull(np.column_stack([sites, -h]))
    indptr, indices = _neighbor_csr(edges, n)
    on_hull = np.zeros(n, dtype=np.uint8)
    on_hull[np.unique(edges)] = 1
    return (sites, h, rect, indptr.astype(np.longlong),
            indices.astype(np.longlong), on_hull)


def best_time(fn, args, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def outputs_identical(a, b):
    for x, y in zip(a, b):
        x = np.nan_to_num(np.asarray(x), nan=-1e300)
        y = np.nan_to_num(np.asarray(y), nan=-1e300)
        if not np.array_equal(x, y):
            return False
    return True


def main():
    rng = np.random.default_rng(99)
    print(f"{'sites':>8} {'compiled':>12} {'pure':>12} {'speedup':>9}  identical")
    ok = True
    for n in (100, 500, 2000, 10000):
        args = prepare(n, rng)
        same = outputs_identical(
            _pdclip.clip_cells(*args), _pdclip_py.clip_cells(*args)
        )
        ok &= same
        reps = 20 if n <= 2000 else 5
        tc = best_time(_pdclip.clip_cells, args, reps)
        tp = best_time(_pdclip_py.clip_cells, args, max(3, reps // 4))
        print(
            f"{n:>8} {tc * 1e3:>10.3f}ms {tp * 1e3:>10.3f}ms"
            f" {tp / tc:>8.1f}x  {same}"
        )
    if not ok:
        print("KERNEL OUTPUTS DIVERGE")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
