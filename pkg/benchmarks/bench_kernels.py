"""Compare the compiled planning kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py --size 20 --pairs 2000
"""

import argparse
import time

import numpy as np

from tracelearn import _kernels_py
from tracelearn.mdp import make_grid

try:
    from tracelearn import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None


def bench(mod, grid, pairs, repeat):
    mask, w, h = grid.mask, grid.width, grid.height
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        for start, goal in pairs:
            nov = mod.cost_to_go(mask, w, h, goal, 1)
            exp = mod.cost_to_go(mask, w, h, goal, 20)
            mod.rollout(mask, w, h, start, goal, nov, exp, 20, 2)
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=20)
    ap.add_argument("--pairs", type=int, default=1000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    grid = make_grid(args.size, args.size, args.seed)
    rng = np.random.default_rng(args.seed)
    pairs = [tuple(int(v) for v in rng.integers(0, grid.n_cells, 2)) for _ in range(args.pairs)]

    py = bench(_kernels_py, grid, pairs, args.repeat)
    print(f"grid {args.size}x{args.size}, {args.pairs} (table, table, rollout) triples, best of {args.repeat}")
    print(f"  python  {py * 1e3:9.1f} ms  ({py / args.pairs * 1e6:7.1f} us/pair)")
    if _compiled is None:
        print("  cython  not built (pip install -e . with Cython available)")
        return 0
    cy = bench(_compiled, grid, pairs, args.repeat)
    print(f"  cython  {cy * 1e3:9.1f} ms  ({cy / args.pairs * 1e6:7.1f} us/pair)  speed-up {py / cy:.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
