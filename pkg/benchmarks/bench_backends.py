"""Compiled vs pure-Python kernels on the same inputs.

    python3 benchmarks/bench_backends.py --sizes 256 1024 4096 --repeats 5

Prints one row per (operation, size) with the median time of each backend,
the speed-up, and the largest relative difference between their outputs.
The l-marginal products are vectorized numpy on either backend and are left out.
"""

import argparse
import statistics
import time

import numpy as np

from fastmmot import _backend
from fastmmot.core import Grid1D, SinkhornConfig
from fastmmot.ftvp1d import ftvp1, ftvp2, ftvp_log
from fastmmot.ftvp2d import ftvp2d_1
from fastmmot.signals import random_instance
from fastmmot.solver import fast_sinkhorn_3m


def cases(n, rng):
    phi, psi = rng.random(n), rng.random(n)
    a, b, g = (rng.normal(scale=0.01, size=n) for _ in range(3))
    side = max(2, int(round(n ** 0.5)))
    f2, g2 = rng.random((side, side)), rng.random((side, side))
    margs = random_instance(n, 3, seed=n)
    grid = Grid1D.on_interval(n)
    cfg = SinkhornConfig(itr_max=20, tol=1e-300)
    return {
        "ftvp1": lambda: ftvp1(phi, psi, 0.99),
        "ftvp2": lambda: ftvp2(phi, psi, 0.99, 1.0 / n),
        "ftvp_log": lambda: ftvp_log(phi, psi, a, b, g, 0.99, 0.1),
        f"ftvp2d_1 {side}x{side}": lambda: ftvp2d_1(f2, g2, 0.99, 0.98),
        "sinkhorn 20 it": lambda: fast_sinkhorn_3m(*margs, grid, cfg)[0].scalings[0],
    }


def timed(fn, repeats):
    out = fn()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times), np.asarray(out)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--sizes", nargs="+", type=int, default=[256, 1024, 4096])
    p.add_argument("--repeats", type=int, default=5)
    args = p.parse_args(argv)
    if "compiled" not in _backend.AVAILABLE:
        raise SystemExit("compiled backend not built; reinstall with Cython available")

    print(f"{'operation':<22}{'N':>7}{'compiled s':>13}{'python s':>13}{'speed-up':>10}{'max rel diff':>14}")
    for n in args.sizes:
        rng = np.random.default_rng(n)
        for label, fn in cases(n, rng).items():
            res = {}
            for which in ("compiled", "python"):
                with _backend.use(which):
                    res[which] = timed(fn, args.repeats)
            (tc, oc), (tp, op) = res["compiled"], res["python"]
            diff = float(np.max(np.abs(oc - op)) / np.max(np.abs(op)))
            print(f"{label:<22}{n:>7}{tc:>13.6f}{tp:>13.6f}{tp / tc:>10.1f}{diff:>14.2e}")


if __name__ == "__main__":
    main()
