"""Time the hot kernels under both backends.

Each backend runs in its own interpreter because the choice is fixed at import
time by LANTNET_NUMBA.  Usage:

    python3 benchmarks/bench_kernels.py [--repeat N]
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, timeit
import numpy as np
from lantnet import kernels, model as M

rng = np.random.default_rng(0)
repeat = int(sys.argv[1])
x = rng.normal(size=(32, 128, 7, 7))
cols = kernels.im2col(x, 3)
stack = rng.uniform(size=(3, 128, 128))
rows, cc = rng.integers(0, 128, 512), rng.integers(0, 128, 512)
samples = rng.uniform(0, 255, 128 * 128)
centers = np.quantile(samples, [0.1, 0.3, 0.5, 0.7, 0.9])
params = M.init_params(7, 0)
patches = rng.uniform(size=(128, 3, 7, 7))
labels = rng.integers(0, 2, 128)

cases = {
    "im2col 32x128x7x7 k3": lambda: kernels.im2col(x, 3),
    "col2im 288x6272 k3": lambda: kernels.col2im(cols, x.shape, 3),
    "gather 512 patches r7": lambda: kernels.gather_patches(stack, rows, cc, 7),
    "fcm_step 16384 x 5": lambda: kernels.fcm_step(samples, centers, 2.0),
    "train batch 128 r7": lambda: M.loss_and_grads(params, patches, labels),
}
out = {"backend": kernels.BACKEND}
for name, fn in cases.items():
    fn()  # warm-up (and JIT compile)
    out[name] = min(timeit.repeat(fn, number=1, repeat=repeat)) * 1e3
print(json.dumps(out))
"""


def run(flag: str, repeat: int) -> dict:
    env = dict(os.environ, LANTNET_NUMBA=flag)
    res = subprocess.run([sys.executable, "-c", WORKER, str(repeat)], env=env, capture_output=True, text=True,
                         check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    nb, npy = run("1", args.repeat), run("0", args.repeat)
    print(f"{'kernel':<24}{'numba ms':>10}{'numpy ms':>10}{'speedup':>9}")
    for key in nb:
        if key == "backend":
            continue
        print(f"{key:<24}{nb[key]:>10.2f}{npy[key]:>10.2f}{npy[key] / nb[key]:>8.2f}x")
    print(f"(backends: {nb['backend']} vs {npy['backend']})")


if __name__ == "__main__":
    main()
