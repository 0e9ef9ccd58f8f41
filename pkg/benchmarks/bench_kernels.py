"""Compiled vs pure-Python Bessel tables.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Times jy_table(x, nmax) on both backends for a few problem sizes and checks
that they agree.  The compiled module must be built (pip install -e .).
"""
import argparse
import timeit

import numpy as np

from helmsplit import _kernels_py

try:
    from helmsplit import _kernels
except ImportError:  # not built
    _kernels = None

CASES = [  # (number of arguments, nmax)
    (64, 40),
    (1024, 60),
    (4096, 120),
    (16384, 200),
]


def _max_rel(a, b):
    ok = np.isfinite(a) & np.isfinite(b)
    scale = np.maximum(np.abs(b[ok]), 1e-300)
    return float(np.max(np.abs(a[ok] - b[ok]) / scale))


def run(repeat):
    if _kernels is None:
        raise SystemExit("helmsplit._kernels is not built; run pip install -e . first")
    rng = np.random.default_rng(0)
    print("%8s %6s %12s %12s %8s %10s" % ("points", "nmax", "cython [s]", "python [s]",
                                         "speedup", "max rel"))
    for m, nmax in CASES:
        x = np.sort(rng.uniform(1e-2, 2.0 * nmax, m))
        tc = min(timeit.repeat(lambda: _kernels.jy_table(x, nmax), number=1, repeat=repeat))
        tp = min(timeit.repeat(lambda: _kernels_py.jy_table(x, nmax), number=1, repeat=repeat))
        a = _kernels.jy_table(x, nmax)
        b = _kernels_py.jy_table(x, nmax)
        diff = max(_max_rel(np.asarray(u), np.asarray(v)) for u, v in zip(a, b))
        print("%8d %6d %12.4g %12.4g %8.1f %10.1e" % (m, nmax, tc, tp, tp / tc, diff))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    run(ap.parse_args(argv).repeat)


if __name__ == "__main__":
    main()
