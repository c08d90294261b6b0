"""Compiled vs pure-numpy kernels, plus one GMM and one TOM training step on each.

    python benchmarks/bench_kernels.py [--repeats 5]
"""

from __future__ import annotations

import argparse
import time

import numpy as np
from threadpoolctl import threadpool_limits

from warpkit import gmm, kernels, tom
from warpkit.diffcore.tensor import Tensor
from warpkit.harness import synth


def best_of(fn, repeats):
    fn()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases():
    rng = np.random.default_rng(0)
    xp = rng.random((4, 16, 66, 50)).astype(np.float32)
    cols = kernels.im2col(xp, 3, 2, 32, 24)
    img = rng.random((4, 3, 64, 48)).astype(np.float32)
    gx = rng.uniform(-1, 48, (4, 64, 48)).astype(np.float32)
    gy = rng.uniform(-1, 64, (4, 64, 48)).astype(np.float32)
    g = rng.random(img.shape).astype(np.float32)
    yy, xx = np.mgrid[:256, :192]
    mask = ((yy - 128) ** 2 / 100**2 + (xx - 96) ** 2 / 70**2 < 1).astype(np.uint8)

    samples = synth.gen_synth_dataset(8, 0)
    data = synth.to_arrays(samples)
    gnet, tnet = gmm.GmmNet(), tom.TomNet()
    gcfg = gmm.TrainConfig(steps=1, lr=1e-4, log_every=0)

    return {
        "im2col 4x16x64x48 k3 s2": lambda: kernels.im2col(xp, 3, 2, 32, 24),
        "col2im 4x16x64x48 k3 s2": lambda: kernels.col2im(cols, 16, 66, 50, 3, 2, 32, 24),
        "grid_sample fwd 4x3x64x48": lambda: kernels.grid_sample_fwd(img, gx, gy, kernels.BORDER),
        "grid_sample bwd 4x3x64x48": lambda: kernels.grid_sample_bwd(img, gx, gy, kernels.ZEROS, g),
        "trace_contour 256x192 ellipse": lambda: kernels.trace_contour(mask),
        "gmm train step (batch 4)": lambda: gmm.train_gmm(gnet, data.person_rep[:4], data.cloth[:4], data.worn[:4], gcfg),
        "tom train step (batch 4)": lambda: tom.train_tom(tnet, data.person_rep[:4], data.worn[:4], data.target[:4], gcfg),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()
    if not kernels.compiled_available():
        raise SystemExit("compiled kernels not built; run `pip install -e . --no-build-isolation` first")
    results = {}
    with threadpool_limits(1):
        for backend in ("python", "compiled"):
            kernels.use(backend)
            for name, fn in cases().items():
                results.setdefault(name, {})[backend] = best_of(fn, args.repeats)
    print(f"{'case':34s} {'python':>10s} {'compiled':>10s} {'speedup':>8s}")
    for name, r in results.items():
        print(f"{name:34s} {r['python'] * 1e3:9.2f}ms {r['compiled'] * 1e3:9.2f}ms {r['python'] / r['compiled']:7.1f}x")


if __name__ == "__main__":
    main()
