"""Benchmark the compiled conv2d packing against the pure-numpy fallback.

Usage: python3 benchmarks/bench_conv.py [--repeats 5]
"""

import argparse
import time

import numpy as np

from resaware.nn import conv_numpy

try:
    from resaware.nn import _convcore
except ImportError:
    _convcore = None

# (label, N, Cin, Cout, H, W) — the detector's three encoder stages at the
# medium resolution, batch 32
SHAPES = [
    ("conv1 32x1x128x126", 32, 1, 32, 128, 126),
    ("conv2 32x32x64x63", 32, 32, 64, 64, 63),
    ("conv3 32x64x32x31", 32, 64, 128, 32, 31),
]


def bench(mod, x, w, b, gy, repeats):
    fwd = []
    bwd = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        mod.conv2d_forward(x, w, b)
        fwd.append(time.perf_counter() - t0)
        t0 = time.perf_counter()
        mod.conv2d_backward(x, w, gy, True)
        bwd.append(time.perf_counter() - t0)
    return min(fwd), min(bwd)


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    mods = [conv_numpy] + ([_convcore] if _convcore is not None else [])
    print(f"{'shape':<22} {'direction':<9} "
          + " ".join(f"{m.NAME:>10}" for m in mods) + "   speedup")
    rng = np.random.default_rng(0)
    for label, n, ci, co, h, wd in SHAPES:
        x = rng.standard_normal((n, ci, h, wd))
        w = rng.standard_normal((co, ci, 3, 3))
        b = rng.standard_normal(co)
        gy = rng.standard_normal((n, co, h, wd))
        times = [bench(m, x, w, b, gy, args.repeats) for m in mods]
        for d, idx in (("forward", 0), ("backward", 1)):
            cells = " ".join(f"{t[idx] * 1e3:>8.1f}ms" for t in times)
            speed = f"{times[0][idx] / times[-1][idx]:>8.2f}x" if len(mods) > 1 else ""
            print(f"{label:<22} {d:<9} {cells} {speed}")
    if _convcore is None:
        print("\ncompiled backend not built; showing numpy fallback only")


if __name__ == "__main__":
    main()
