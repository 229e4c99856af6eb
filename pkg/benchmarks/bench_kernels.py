"""Compare the numba and numpy kernel backends on evaluation-sized inputs.

    python benchmarks/bench_kernels.py [--repeat 5] [--size 480 640]

Both backends are imported directly, so the ``GHOSTFREE_NO_NUMBA`` flag does
not matter here. The first numba call (JIT compile or cache load) is timed
separately from the steady state.
"""
import argparse
import time

import numpy as np

from ghostfree.kernels import _numba, _numpy, gaussian_window


def cases(h, w, rng):
    img = rng.random((h, w, 3))
    plane = rng.random((h, w))
    pred, gt = rng.random((h, w)) > 0.5, rng.random((h, w)) > 0.5
    win = gaussian_window()
    return {
        "srgb_to_lab": lambda m: m.srgb_to_lab(img),
        "resize_bilinear": lambda m: m.resize_bilinear(img, 256, int(round(256 * w / h))),
        "confusion_counts": lambda m: m.confusion_counts(pred, gt),
        "gaussian_filter": lambda m: m.gaussian_filter(plane, win),
    }


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--size", type=int, nargs=2, default=(480, 640), metavar=("H", "W"))
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"input {args.size[0]}x{args.size[1]}, best of {args.repeat}")
    print(f"{'kernel':<18}{'numba first':>13}{'numba':>11}{'numpy':>11}{'speedup':>9}  max |diff|")
    for name, run in cases(*args.size, rng).items():
        t0 = time.perf_counter()
        a = run(_numba)
        first = time.perf_counter() - t0
        t_nb = best_of(lambda: run(_numba), args.repeat)
        t_np = best_of(lambda: run(_numpy), args.repeat)
        b = run(_numpy)
        diff = float(np.max(np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))))
        print(f"{name:<18}{first * 1e3:>11.1f}ms{t_nb * 1e3:>9.2f}ms{t_np * 1e3:>9.2f}ms{t_np / t_nb:>8.1f}x  {diff:.1e}")


if __name__ == "__main__":
    main()
