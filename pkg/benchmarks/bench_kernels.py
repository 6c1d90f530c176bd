"""Benchmark the numba-compiled kernels against the pure-numpy fallback.

Times every kernel on a training-shaped workload (batch x memory rows x dim)
at three sizes.  Numba timings exclude the one-time JIT compile (a warm-up
call runs first).  Usage::

    python benchmarks/bench_kernels.py [--repeats 20]
"""

import argparse
import time

import numpy as np

from lada._kernels import available_backends, backend_impls


def make_workload(batch, classes, lam, dim, seed=0):
    rng = np.random.default_rng(seed)

    def unit(shape):
        v = rng.normal(size=shape)
        return v / np.linalg.norm(v, axis=-1, keepdims=True)

    x = unit((batch, dim))
    rows = unit((classes * lam, dim))
    offsets = np.arange(0, (classes + 1) * lam, lam, dtype=np.int64)
    t = unit((classes, dim))
    g = rng.normal(size=(batch, classes))
    centers = unit((8, dim))
    variances = rng.uniform(0.01, 0.1, size=8)
    return x, rows, offsets, t, g, centers, variances


def bench(fn, repeats):
    fn()  # warm-up: JIT compile + cache touch
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=20)
    args = parser.parse_args()

    backends = available_backends()
    print(f"backends: {', '.join(backends)}")
    print(f"{'size':<22}{'kernel':<16}" + "".join(f"{b:>12}" for b in backends) + f"{'ratio':>9}")
    print("-" * (38 + 12 * len(backends) + 9))

    sizes = [
        ("B=64  C=10  d=64", 64, 10, 16, 64),
        ("B=224 C=50  d=64", 224, 50, 16, 64),
        ("B=256 C=200 d=512", 256, 200, 16, 512),
    ]
    beta, scale = 5.0, 100.0
    for label, batch, classes, lam, dim in sizes:
        x, rows, offsets, t, g, centers, variances = make_workload(batch, classes, lam, dim)
        exps = backend_impls(backends[0])["lada_forward"](x, rows, offsets, beta)[1]
        cases = {
            "lada_forward": lambda impl: impl["lada_forward"](x, rows, offsets, beta),
            "lada_backward": lambda impl: impl["lada_backward"](x, exps, g, offsets, beta),
            "text_forward": lambda impl: impl["text_forward"](x, t, scale),
            "text_backward": lambda impl: impl["text_backward"](x, g, scale),
            "kmeans_assign": lambda impl: impl["kmeans_assign"](x, centers),
            "gmm_log_prob": lambda impl: impl["gmm_log_prob"](x, centers, variances),
        }
        for kernel, runner in cases.items():
            times = []
            for name in backends:
                impl = backend_impls(name)
                times.append(bench(lambda: runner(impl), args.repeats))
            ratio = times[0] / times[-1] if len(times) > 1 and times[-1] > 0 else 1.0
            row = f"{label:<22}{kernel:<16}"
            row += "".join(f"{tm * 1e3:>10.3f}ms" for tm in times)
            row += f"{ratio:>8.2f}x"
            print(row)
        print()


if __name__ == "__main__":
    main()
