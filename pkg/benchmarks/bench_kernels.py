"""Numba vs numpy timings for the hot kernels and for one training step.

    python3 benchmarks/bench_kernels.py [--repeat 20]

The per-kernel table calls both implementations directly. The training-step
row runs a child process per backend so BIIRRA_NUMBA takes effect at import.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from biirra import kernels

STEP_SNIPPET = """
import time, numpy as np
from biirra.config import TrainConfig
from biirra.data import SyntheticSpec, generate_synthetic_dataset
from biirra.encoders import Model
from biirra.train_eval import model_config_for, train
ds = generate_synthetic_dataset(SyntheticSpec())
cfg = TrainConfig(steps={steps}, log_every=0)
m = Model(model_config_for(cfg, ds.train, len(ds.vocab)))
train(m, ds.train, cfg.replace(steps=1))
t = time.perf_counter()
train(m, ds.train, cfg)
print((time.perf_counter() - t) / {steps})
"""


def kernel_cases(rng):
    x = rng.normal(size=(8 * 65, 64))
    h = rng.normal(size=(8 * 65, 256))
    s = rng.normal(size=(8 * 4 * 65, 65))
    g, b = rng.normal(size=64), rng.normal(size=64)
    y, xhat, rstd = kernels.layer_norm_fwd.numpy_impl(x, g, b, 1e-5)
    p = kernels.softmax_fwd.numpy_impl(s)
    mask = rng.random((8, 8)) < 0.5
    hits = (rng.random((256, 128)) < 0.1).astype(np.float64)
    return {
        "layer_norm_fwd": (x, g, b, 1e-5),
        "layer_norm_bwd": (x, xhat, rstd, g),
        "softmax_fwd": (s,),
        "softmax_bwd": (p, s),
        "gelu_fwd": (h,),
        "gelu_bwd": (h, h),
        "count_components": (mask,),
        "average_precision": (hits,),
    }


def time_call(fn, args, repeat):
    fn(*args)  # compile / warm up
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def step_time(flag, steps):
    env = dict(os.environ, BIIRRA_NUMBA=flag)
    out = subprocess.run([sys.executable, "-c", STEP_SNIPPET.format(steps=steps)],
                         env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--steps", type=int, default=5, help="training steps per backend; 0 skips")
    args = ap.parse_args()
    if not kernels.NUMBA_AVAILABLE:
        sys.exit("numba is not importable; nothing to compare")

    rng = np.random.default_rng(0)
    print(f"{'kernel':<20}{'numba ms':>10}{'numpy ms':>10}{'speedup':>9}")
    for name, case in kernel_cases(rng).items():
        disp = kernels.KERNELS[name]
        t_nb = time_call(disp.numba_impl, case, args.repeat)
        t_np = time_call(disp.numpy_impl, case, args.repeat)
        print(f"{name:<20}{1e3 * t_nb:>10.3f}{1e3 * t_np:>10.3f}{t_np / t_nb:>8.1f}x")

    if args.steps:
        t_nb = step_time("1", args.steps)
        t_np = step_time("0", args.steps)
        print(f"{'train step':<20}{1e3 * t_nb:>10.1f}{1e3 * t_np:>10.1f}{t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()
