"""Time each hot kernel under numba and under its numpy twin.

    python3 benchmarks/bench_kernels.py [--repeat 20] [--size 256 192]

Both backends are called directly through ``impl=``, so the env switch does
not matter here. The first numba call (JIT / cache load) is excluded.
"""

import argparse
import time

import numpy as np

from tryon_lab import kernels
from tryon_lab.metrics import gaussian_window


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(h, w, rng):
    img = rng.random((h, w, 3))
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    xs = xs + rng.normal(0, 2, (h, w))
    ys = ys + rng.normal(0, 2, (h, w))
    points = rng.uniform(0, min(h, w), (18, 2))
    gray = rng.random((h, w))
    window = gaussian_window()
    return {
        "bilinear_sample": lambda impl: kernels.bilinear_sample(img, xs, ys, kernels.BORDER, impl=impl),
        "rasterize_discs": lambda impl: kernels.rasterize_discs(points, h, w, 3.0 * h / 64, impl=impl),
        "filter_valid": lambda impl: kernels.filter_valid(gray, window, impl=impl),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--size", type=int, nargs=2, default=(256, 192), metavar=("H", "W"))
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"{'kernel':<18}{'numba ms':>10}{'numpy ms':>10}{'speedup':>9}  max |diff|")
    for name, run in cases(*args.size, rng).items():
        diff = np.abs(run(kernels.numba_impl) - run(kernels.numpy_impl)).max()
        t_nb = best_of(lambda: run(kernels.numba_impl), args.repeat)
        t_np = best_of(lambda: run(kernels.numpy_impl), args.repeat)
        print(f"{name:<18}{t_nb * 1e3:>10.3f}{t_np * 1e3:>10.3f}{t_np / t_nb:>8.1f}x  {diff:.1e}")


if __name__ == "__main__":
    main()
