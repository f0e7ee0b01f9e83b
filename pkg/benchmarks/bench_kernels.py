"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N]

Prints one row per kernel and dtype with the median wall time of each
backend and the speedup (python / compiled).
"""
import argparse
import statistics
import time

import numpy as np

from visexpert.tensor import _kernels_py, kernels


def median_time(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def cases(dtype, rng):
    x = rng.normal(size=(64, 32, 32)).astype(dtype)
    w = rng.normal(size=(64, 64, 2, 2)).astype(dtype)
    b = rng.normal(size=64).astype(dtype)
    g = rng.normal(size=(64, 16, 16)).astype(dtype)
    s = rng.normal(size=(256, 256)).astype(dtype)
    mask = np.tril(np.ones((256, 256), bool))
    y = _kernels_py.softmax_rows(s, mask)
    a, c = rng.normal(size=(256, 512)).astype(dtype), rng.normal(size=(256, 512)).astype(dtype)
    return {
        "conv2x2_s2_forward": lambda k: k.conv2x2_s2_forward(x, w, b),
        "conv2x2_s2_backward": lambda k: k.conv2x2_s2_backward(x, w, g),
        "softmax_rows(masked)": lambda k: k.softmax_rows(s, mask),
        "softmax_rows_backward": lambda k: k.softmax_rows_backward(y, s),
        "swiglu_gate": lambda k: k.swiglu_gate(a, c),
        "swiglu_gate_backward": lambda k: k.swiglu_gate_backward(a, c, s[:, :1] * a),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    compiled = kernels.compiled_backend
    if compiled is None:
        print("compiled kernels are not built; run `pip install -e . --no-build-isolation` first")
        return
    rng = np.random.default_rng(0)
    print(f"{'kernel':24s} {'dtype':8s} {'python ms':>10s} {'compiled ms':>12s} {'speedup':>8s}")
    for dtype in (np.float32, np.float64):
        for name, fn in cases(dtype, rng).items():
            tp = median_time(lambda: fn(_kernels_py), args.repeat)
            tc = median_time(lambda: fn(compiled), args.repeat)
            print(f"{name:24s} {np.dtype(dtype).name:8s} {tp * 1e3:10.3f} {tc * 1e3:12.3f} {tp / tc:8.2f}")


if __name__ == "__main__":
    main()
