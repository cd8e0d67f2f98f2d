"""Compare the compiled and numpy kernel backends.

Times each hot kernel on shapes taken from the tiny training schedule, then
one full training iteration per backend (run in a subprocess so the backend
is chosen at import). Prints CSV.

    python3 benchmarks/bench_kernels.py [--repeat 20] [--no-train]
"""

import argparse
import csv
import os
import subprocess
import sys
import timeit

import numpy as np

from bevx._kernels import backend_module

# (label, input shape, kernel, stride, padding) as seen in the encoder and heads
CONV_SHAPES = [
    ("stem 48x32x64x1", (48, 32, 64, 1), 3, 2, 1),
    ("down4 48x16x32x16", (48, 16, 32, 16), 3, 2, 1),
    ("bev 8x16x16x32", (8, 16, 16, 32), 3, 1, 1),
]
# (label, input shape, output size)
RESIZE_SHAPES = [
    ("bev 8x8x8x32 -> 16x16", (8, 8, 8, 32), (16, 16)),
    ("seg 8x16x16x1 -> 32x32", (8, 16, 16, 1), (32, 32)),
    ("aux 8x4x4x1 -> 32x32", (8, 4, 4, 1), (32, 32)),
]

STEP_SCRIPT = """
import time
from bevx import _kernels
from bevx.config import RunConfig
from bevx import harness as H
cfg = RunConfig(bev_sizes=(4, 8, 16), extent=8.0, n_samples=8, holdout=0.0, iterations={iters})
data = H.dataset_from_config(cfg)
H.train(cfg.with_overrides(iterations=1), data)  # warm-up
t = time.perf_counter()
H.train(cfg, data)
print(_kernels.BACKEND, (time.perf_counter() - t) / {iters})
"""


def best_of(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def kernel_rows(backends, repeat):
    rng = np.random.default_rng(0)
    rows = []
    for label, shape, k, s, p in CONV_SHAPES:
        x = rng.normal(size=shape)
        cols = backends["python"].im2col(x, k, k, s, p)
        g = rng.normal(size=cols.shape)
        for name, mod in backends.items():
            rows.append(("im2col", label, name, best_of(lambda: mod.im2col(x, k, k, s, p), repeat)))
            rows.append(("col2im", label, name, best_of(lambda: mod.col2im(g, shape, k, k, s, p), repeat)))
    for label, shape, (ho, wo) in RESIZE_SHAPES:
        x = rng.normal(size=shape)
        g = rng.normal(size=(shape[0], ho, wo, shape[3]))
        for name, mod in backends.items():
            rows.append(("resize", label, name, best_of(lambda: mod.resize_bilinear(x, ho, wo), repeat)))
            rows.append(("resize_backward", label, name,
                         best_of(lambda: mod.resize_bilinear_backward(g, shape[1], shape[2]), repeat)))
    return rows


def train_step_rows(backends, iters):
    rows = []
    for name in backends:
        env = dict(os.environ, BEVX_KERNELS=name)
        out = subprocess.run([sys.executable, "-c", STEP_SCRIPT.format(iters=iters)], env=env,
                             capture_output=True, text=True, check=True).stdout.split()
        rows.append(("train_iteration", "tiny schedule, 6 views, batch 8", out[0], float(out[1])))
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--train-iters", type=int, default=10)
    ap.add_argument("--no-train", action="store_true")
    args = ap.parse_args(argv)

    backends = {"python": backend_module("python")}
    try:
        backends["cython"] = backend_module("cython")
    except ImportError:
        print("compiled backend not built; timing numpy kernels only", file=sys.stderr)

    rows = kernel_rows(backends, args.repeat)
    if not args.no_train:
        rows += train_step_rows(backends, args.train_iters)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["kernel", "case", "backend", "seconds", "speedup_vs_python"])
    base = {(k, c): t for k, c, b, t in rows if b == "python"}
    for k, c, b, t in rows:
        w.writerow([k, c, b, f"{t:.6f}", f"{base[(k, c)] / t:.2f}"])


if __name__ == "__main__":
    main()
