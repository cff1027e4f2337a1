"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]

Both backends are imported directly, so the environment switch is not needed.
"""

import argparse
import time

import numpy as np

from univperturb import _pykernels
from univperturb.attacks import _ABS_NUDGE, _REL_NUDGE
from univperturb.models import init_mlp
from univperturb.numerics import SVD_MAX_SWEEPS, SVD_TOL

try:
    from univperturb import _ckernels
except ImportError:
    _ckernels = None


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench_jacobi(mod, rows, cols, repeat):
    a = np.random.default_rng(0).standard_normal((rows, cols))

    def run():
        at = np.ascontiguousarray(a.T)
        mod.jacobi_sweeps(at, np.eye(cols), SVD_TOL, SVD_MAX_SWEEPS)

    return best_of(run, repeat)


def bench_deepfool(mod, d, hidden, npts, repeat):
    m = init_mlp(d, 10, hidden, seed=1)
    xs = np.random.default_rng(1).standard_normal((npts, d))
    ks = m.predict(xs)

    def run():
        for x, k in zip(xs, ks):
            mod.deepfool_loop(m._w, m._b, m._relu, x, int(k), 50, 0.02, _REL_NUDGE, _ABS_NUDGE)

    return best_of(run, repeat)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    cases = [
        ("jacobi_sweeps 100x50", lambda mod: bench_jacobi(mod, 100, 50, args.repeat)),
        ("jacobi_sweeps 100x100", lambda mod: bench_jacobi(mod, 100, 100, args.repeat)),
        ("deepfool_loop d=100 2x64, 200 pts", lambda mod: bench_deepfool(mod, 100, (64, 64), 200, args.repeat)),
        ("deepfool_loop d=784 2x128, 100 pts", lambda mod: bench_deepfool(mod, 784, (128, 128), 100, args.repeat)),
    ]
    print(f"{'kernel':38s} {'numpy [s]':>10s} {'cython [s]':>11s} {'speedup':>8s}")
    for name, fn in cases:
        tp = fn(_pykernels)
        if _ckernels is None:
            print(f"{name:38s} {tp:10.4f} {'n/a':>11s} {'n/a':>8s}")
            continue
        tc = fn(_ckernels)
        print(f"{name:38s} {tp:10.4f} {tc:11.4f} {tp / tc:7.1f}x")


if __name__ == "__main__":
    main()
