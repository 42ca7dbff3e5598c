"""Compare the compiled and pure-Python kernels.

Usage::

    python benchmarks/bench_kernels.py [--n 1000] [--repeat 5]

Times the three kernels on the same simulated series with each backend
and prints the per-call time and the speed-up of the compiled backend.
Results of both backends are checked for agreement first.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from countbreak import _pykernels
from countbreak.models import DEFAULT_SPACE, ModelSpec, simulate

try:
    from countbreak import _ckernels
except ImportError:  # pragma: no cover
    _ckernels = None


def cases(y: np.ndarray):
    n = y.size
    theta = np.array([0.5, 0.2, 0.3])
    x0 = np.array([1.0, 0.1, 0.1])
    space = DEFAULT_SPACE
    return {
        "mean_paths (order 2)": lambda k: k.mean_paths(y, 0, 0, n - 1, theta, 1, 1, 0, 2),
        "window_stats (with Hessian)": lambda k: k.window_stats(y, 0, 0, n - 1, theta, 1, 1, 0, True),
        "fit_window": lambda k: k.fit_window(y, 0, 0, n - 1, 1, 1, 0, x0, space.c_min, space.a0_max,
                                             space.cap, 1e-6, 500),
    }


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n", type=int, default=1000, help="series length")
    parser.add_argument("--repeat", type=int, default=5, help="timing repetitions (best is reported)")
    args = parser.parse_args()
    if _ckernels is None:
        raise SystemExit("compiled kernels are not built; run `pip install -e . --no-build-isolation`")

    y = simulate(ModelSpec(1, 1, 1.0), (0.4, 0.15, 0.2), args.n, seed=1).as_float()
    print(f"series length {args.n}, best of {args.repeat}")
    print(f"{'kernel':<30}{'python [ms]':>14}{'compiled [ms]':>16}{'speed-up':>10}")
    for name, call in cases(y).items():
        ref, got = call(_pykernels), call(_ckernels)
        for a, b in zip(ref, got):
            if isinstance(a, np.ndarray):
                np.testing.assert_allclose(a, b, rtol=1e-8, atol=1e-10)
        times = {}
        for label, mod in (("python", _pykernels), ("compiled", _ckernels)):
            number = 1 if label == "python" else 20
            best = min(timeit.repeat(lambda: call(mod), number=number, repeat=args.repeat))
            times[label] = best / number * 1e3
        print(f"{name:<30}{times['python']:>14.3f}{times['compiled']:>16.4f}"
              f"{times['python'] / times['compiled']:>10.1f}x")


if __name__ == "__main__":
    main()
