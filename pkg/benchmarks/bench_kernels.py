"""Compare the compiled kernels with the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--paths N] [--steps N] [--repeat N]

Prints the best wall time of each backend per kernel, the speed-up and the
largest difference between the two outputs.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from bundlemart import _pykernels

try:
    from bundlemart import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def cases(n_paths, n_steps, dt=1e-3):
    rng = np.random.default_rng(0)
    dW2 = rng.standard_normal((n_paths, n_steps, 2)) * np.sqrt(dt)
    x0 = np.tile([0.5, 0.0], (n_paths, 1))
    c0 = np.zeros(n_paths, dtype=np.int64)
    y0 = x0 + np.array([np.pi / 2, 0.0])
    return {
        "sphere_euler": lambda mod: mod.sphere_euler(x0, c0, dW2, 1.0, 1.5, 1),
        "torus_couple": lambda mod: mod.torus_couple(x0, y0, dW2, 1, 2 * np.sqrt(2 * dt), 1),
    }


def max_difference(a, b):
    return max(float(np.max(np.abs(np.asarray(u, float) - np.asarray(v, float))))
               for u, v in zip(a, b))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--paths", type=int, default=2000)
    ap.add_argument("--steps", type=int, default=1000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if _ckernels is None:
        print("compiled kernels not built; only the numpy fallback is available")
    print(f"{'kernel':14s} {'numpy s':>10s} {'cython s':>10s} {'speed-up':>9s} {'max diff':>10s}")
    for name, fn in cases(args.paths, args.steps).items():
        t_py = min(timeit.repeat(lambda: fn(_pykernels), number=1, repeat=args.repeat))
        if _ckernels is None:
            print(f"{name:14s} {t_py:10.3f} {'-':>10s} {'-':>9s} {'-':>10s}")
            continue
        t_c = min(timeit.repeat(lambda: fn(_ckernels), number=1, repeat=args.repeat))
        diff = max_difference(fn(_pykernels), fn(_ckernels))
        print(f"{name:14s} {t_py:10.3f} {t_c:10.3f} {t_py / t_c:9.1f} {diff:10.2e}")


if __name__ == "__main__":
    main()
