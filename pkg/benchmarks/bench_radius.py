"""Time radius_match on each available backend.

    python benchmarks/bench_radius.py [--sizes 1000 5000 20000] [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from disambig3d._backend import available_backends
from disambig3d.geometry import LabeledPointCloud, radius_match


def cloud(n, rng):
    xyz = rng.random((n, 3)) * np.cbrt(n) * 0.05  # about one point per 5 cm voxel
    ones = np.ones(n, dtype=np.int64)
    return LabeledPointCloud(xyz, ones, ones)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", type=int, nargs="+", default=[1000, 5000, 20000, 100000])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--tau-d", type=float, default=0.075)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    backends = available_backends()
    print(f"{'points':>8} " + " ".join(f"{b + ' ms':>12}" for b in backends) + ("   speedup" if len(backends) > 1 else ""))
    for n in args.sizes:
        a, b = cloud(n, rng), cloud(n, rng)
        times = {}
        for backend in backends:
            t = timeit.repeat(lambda: radius_match(a, b, args.tau_d, backend), number=1, repeat=args.repeat)
            times[backend] = min(t) * 1e3
        row = f"{n:>8} " + " ".join(f"{times[b]:>12.2f}" for b in backends)
        if "cython" in times:
            row += f"   {times['python'] / times['cython']:7.2f}x"
        print(row)


if __name__ == "__main__":
    main()
