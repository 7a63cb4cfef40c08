"""Timing comparison of the compiled kernel extension vs the numpy fallback.

Usage: python benchmarks/benchmark_kernels.py [--repeats N]

Both backends produce bit-identical forward results; this script only
measures speed, on shapes representative of the bundled models.
"""

import argparse
import time

import numpy as np

from sparsetrace import _pykernels as pk

try:
    from sparsetrace import _ckernels as ck
except ImportError:
    ck = None

CASES = [
    ("conv2d 128x28x28x1 k5x5x1x8", "conv",
     dict(x=(128, 28, 28, 1), w=(5, 5, 1, 8), stride=1)),
    ("conv2d 128x12x12x8 k5x5x8x16", "conv",
     dict(x=(128, 12, 12, 8), w=(5, 5, 8, 16), stride=1)),
    ("conv2d 32x32x32x16 k3x3x16x16", "conv",
     dict(x=(32, 32, 32, 16), w=(3, 3, 16, 16), stride=1)),
    ("dense 128x256 -> 64", "dense", dict(x=(128, 256), w=(256, 64))),
    ("dense 128x1024 -> 96", "dense", dict(x=(128, 1024), w=(1024, 96))),
    ("maxpool 128x24x24x8 w2s2", "pool", dict(x=(128, 24, 24, 8))),
]


def _run(kind, arrs, mod):
    if kind == "conv":
        return mod.conv2d_forward(arrs["x"], arrs["w"], arrs["stride"])
    if kind == "dense":
        return mod.dense_forward(arrs["x"], arrs["w"])
    return mod.maxpool_forward(arrs["x"], 2, 2)


def _time(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()
    if ck is None:
        print("compiled backend not built; showing fallback timings only")
    rng = np.random.default_rng(0)
    print(f"{'case':40s} {'python':>10s} {'compiled':>10s} {'speedup':>8s}")
    for name, kind, spec in CASES:
        arrs = {k: rng.normal(size=v) if isinstance(v, tuple) else v
                for k, v in spec.items()}
        tp = _time(lambda: _run(kind, arrs, pk), args.repeats)
        if ck is not None:
            tc = _time(lambda: _run(kind, arrs, ck), args.repeats)
            a, b = _run(kind, arrs, pk), _run(kind, arrs, ck)
            a = a[0] if isinstance(a, tuple) else a
            b = b[0] if isinstance(b, tuple) else b
            assert np.array_equal(a, b), f"backend mismatch on {name}"
            print(f"{name:40s} {tp*1e3:9.2f}ms {tc*1e3:9.2f}ms {tp/tc:7.2f}x")
        else:
            print(f"{name:40s} {tp*1e3:9.2f}ms {'-':>10s} {'-':>8s}")


if __name__ == "__main__":
    main()
