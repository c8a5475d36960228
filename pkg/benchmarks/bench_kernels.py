"""Compare the compiled and pure-Python kernel backends.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from fayherriot import kernels
from fayherriot.simulate import SimDesign, Simulator
from fayherriot.spatial import estimate_spatial


def _problem(D, p, seed=0):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(D), rng.standard_normal((D, p - 1))])
    var = rng.uniform(0.5, 2.0, D)
    y = X @ np.ones(p) + rng.standard_normal(D) * np.sqrt(1.0 + var)
    return y, X, np.ones(D), var


def bench(fn, repeat):
    t = timeit.repeat(fn, number=1, repeat=repeat)
    return 1e3 * min(t)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args(argv)
    impls = kernels.implementations()
    if "compiled" not in impls:
        print("compiled extension not built; only the Python backend is available")
    rows = []
    for D in (50, 300, 1000):
        y, X, a, b = _problem(D, 3)
        for name, impl in impls.items():
            ms = bench(lambda: kernels.maximize_profile(y, X, a, b, True, 0.0, 50.0, 1e-8,
                                                        impl=impl), args.repeat)
            rows.append(("maximize_profile", D, name, ms))
        lon, lat = np.random.default_rng(1).uniform(0, 10, (2, D))
        for name, impl in impls.items():
            ms = bench(lambda: kernels.haversine_matrix(lon, lat, 6371.0088, impl=impl),
                       args.repeat)
            rows.append(("haversine_matrix", D, name, ms))

    # end to end: one spatial fit (eigendecompositions dominate at large D)
    sim = Simulator(SimDesign(D=100, model="spatial", rho=0.6, K1=5, K2=5))
    ds, W = sim.draw(0).dataset, sim.W
    saved = kernels._impl
    for name, impl in impls.items():
        kernels._impl = impl
        ms = bench(lambda: estimate_spatial(ds, W), max(3, args.repeat // 5))
        rows.append(("estimate_spatial", 100, name, ms))
    kernels._impl = saved

    print(f"{'kernel':<18}{'D':>6}{'backend':>10}{'ms':>10}{'speedup':>9}")
    ref = {(k, D): ms for k, D, n, ms in rows if n == "python"}
    for k, D, name, ms in rows:
        print(f"{k:<18}{D:>6}{name:>10}{ms:>10.3f}{ref[(k, D)] / ms:>8.1f}x")


if __name__ == "__main__":
    main()
