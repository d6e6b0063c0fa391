"""Compare the compiled and NumPy kernels on loss-and-gradient evaluations.

Usage::

    python benchmarks/bench_kernels.py [--repeat 5] [--python-repeat 1]

Prints one row per problem with the median wall time of each backend and
the speed-up.  Both backends are checked to agree before timing.
"""
import argparse
import time

import numpy as np

from sparsysid import kernels
from sparsysid.model import ModelSpec, SaturationConfig, random_params

PROBLEMS = [
    # name, n_x, n_u, n_y, fx_layers, fy_layers, N
    ("linear 6x2x2", 6, 2, 2, (), (), 2000),
    ("linear 3x10x1", 3, 10, 1, (), (), 10000),
    ("rnn 12x6x6 36/24", 12, 6, 6, (36,), (24,), 2000),
]


def _median_time(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def run(repeat=5, python_repeat=1):
    rng = np.random.default_rng(0)
    sat = SaturationConfig()
    rows = []
    for name, n_x, n_u, n_y, fx, fy, N in PROBLEMS:
        spec = ModelSpec(n_x, n_u, n_y, fx, fy, "swish", feedthrough=False)
        p = random_params(spec, rng)
        U = rng.standard_normal((N, n_u))
        Y = rng.standard_normal((N, n_y))

        def call():
            return kernels.loss_grad(p, spec, p.x0_list[0], U, Y, sat)

        res = {}
        for backend in kernels.available_backends():
            prev = kernels.use_backend(backend)
            try:
                out = call()
                res[backend] = (out, _median_time(
                    call, python_repeat if backend == "python" else repeat))
            finally:
                kernels.use_backend(prev)
        if "cython" in res:
            a, b = res["cython"][0], res["python"][0]
            assert abs(a[0] - b[0]) <= 1e-9 * max(1.0, abs(b[0]))
            for key in a[2]:
                np.testing.assert_allclose(a[2][key], b[2][key], rtol=1e-8, atol=1e-10)
        rows.append((name, {k: v[1] for k, v in res.items()}))
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--python-repeat", type=int, default=1)
    args = ap.parse_args()
    rows = run(args.repeat, args.python_repeat)
    print(f"{'problem':<20} {'cython [ms]':>12} {'python [ms]':>12} {'speed-up':>9}")
    for name, t in rows:
        tc = t.get("cython")
        tp = t["python"]
        if tc is None:
            print(f"{name:<20} {'n/a':>12} {1e3 * tp:12.2f} {'n/a':>9}")
        else:
            print(f"{name:<20} {1e3 * tc:12.3f} {1e3 * tp:12.2f} {tp / tc:9.1f}")


if __name__ == "__main__":
    main()
