"""Compare the compiled and numpy kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--pipeline]

``--pipeline`` also times one streamed frame of a mid-sized random network
under each backend (the fallback is forced with AOCSTREAM_PURE_PYTHON=1 in a
child process).
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from aocstream import kernels

PIPELINE_SNIPPET = """
import time
from aocstream import kernels
from aocstream.testkit import RandomNetSpec, gen_random_net, gen_random_weights, gen_random_image
from aocstream.schedule import auto_schedule
from aocstream.streamsim import run_pipeline
net = gen_random_net(RandomNetSpec(seed=5, min_depth=6, max_depth=6, min_size=48, max_size=48))
w = gen_random_weights(net, 5)
img = gen_random_image(net.input_shape, 5)
s = auto_schedule(net)
t = time.perf_counter()
run_pipeline(net, s, w, img)
print(kernels.BACKEND, time.perf_counter() - t)
"""


def cases(rng):
    x = rng.integers(-128, 128, size=(32, 66, 66))
    w = rng.integers(-128, 128, size=(32, 32, 3, 3))
    dw = rng.integers(-128, 128, size=(32, 3, 3))
    win = rng.integers(-128, 128, size=(16, 3, 3))
    wg = rng.integers(-128, 128, size=(64, 16, 3, 3))
    valid = np.ones((3, 3), dtype=np.int64)
    acc = np.zeros(64, dtype=np.int64)
    return {
        "conv_accumulate 32x64x64 K3": lambda m: m.conv_accumulate(x, w, 1, 64, 64),
        "depthwise_accumulate 32x64x64": lambda m: m.depthwise_accumulate(x, dw, 1, 64, 64),
        "window_conv 64x16x3x3": lambda m: m.window_conv(wg, win, acc),
        "window_max 16x3x3": lambda m: m.window_max(win, valid),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--pipeline", action="store_true")
    args = ap.parse_args(argv)

    found = kernels.backends()
    print(f"active backend: {kernels.BACKEND}; available: {', '.join(found)}")
    rng = np.random.default_rng(0)
    print(f"{'kernel':34s}" + "".join(f"{name:>14s}" for name in found) + "     speedup")
    for label, fn in cases(rng).items():
        times = {}
        for name, mod in found.items():
            number = 3 if "accumulate" in label else 2000
            best = min(timeit.repeat(lambda: fn(mod), number=number, repeat=args.repeat))
            times[name] = best / number
        ratio = times["python"] / times["cython"] if "cython" in times else float("nan")
        cols = "".join(f"{t * 1e6:12.1f}us" for t in times.values())
        print(f"{label:34s}{cols}{ratio:10.1f}x")

    if args.pipeline:
        for env in ({}, {"AOCSTREAM_PURE_PYTHON": "1"}):
            out = subprocess.run([sys.executable, "-c", PIPELINE_SNIPPET], capture_output=True,
                                 text=True, env={**os.environ, **env}, check=True).stdout.split()
            print(f"pipeline frame ({out[0]}): {float(out[1]):.2f} s")


if __name__ == "__main__":
    main()
