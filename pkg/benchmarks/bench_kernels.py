"""Benchmark the compiled convolution backend against the NumPy fallback.

Times the three kernel primitives on a range of image sizes, checks that
both backends agree, and (with --end-to-end) times a full fixed-point
reconstruction under each backend in separate subprocesses, since the
backend is chosen once at import time.

Run from the repository root after installing the package:

    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --sizes 32,64,128 --repeats 20 --end-to-end
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from eqmri._kernels import _convpy

try:
    from eqmri._kernels import _convx
except ImportError:
    _convx = None


def _time(fn, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_primitives(sizes, channels, ksize, repeats):
    rng = np.random.default_rng(0)
    header = f"{'kernel':<18}{'size':>6}{'python':>12}{'compiled':>12}{'speedup':>9}"
    print(header)
    print("-" * len(header))
    for n in sizes:
        x = rng.standard_normal((channels, n, n))
        w = rng.standard_normal((channels, channels, ksize, ksize))
        b = rng.standard_normal(channels)
        gy = rng.standard_normal((channels, n, n))
        cases = [
            ("conv2d", lambda impl: impl.conv2d(x, w, b)),
            ("conv2d_input_grad", lambda impl: impl.conv2d_input_grad(gy, w)),
            ("conv2d_weight_grad", lambda impl: impl.conv2d_weight_grad(x, gy, ksize, ksize)),
        ]
        for name, call in cases:
            t_py = _time(lambda: call(_convpy), repeats)
            if _convx is None:
                print(f"{name:<18}{n:>6}{t_py * 1e3:>10.3f}ms{'n/a':>12}{'':>9}")
                continue
            got, want = call(_convx), call(_convpy)
            got = got if isinstance(got, tuple) else (got,)
            want = want if isinstance(want, tuple) else (want,)
            for g, w_ in zip(got, want):
                np.testing.assert_allclose(g, w_, rtol=1e-12, atol=1e-12)
            t_cx = _time(lambda: call(_convx), repeats)
            print(
                f"{name:<18}{n:>6}{t_py * 1e3:>10.3f}ms{t_cx * 1e3:>10.3f}ms{t_py / t_cx:>8.1f}x"
            )


_E2E_SNIPPET = """
import time
import numpy as np
from eqmri import _kernels
from eqmri.datagen import make_dataset
from eqmri.denoiser import ConvArch, init_params, spectral_normalize
from eqmri.deq import AndersonConfig, DeqConfig, forward_fixed_point

ds = make_dataset(1, {size}, {size}, 4, 4, 4, 0.01, 0)
params = spectral_normalize(init_params(ConvArch(), {size}, {size}, 1), 5)
cfg = DeqConfig(tol=1e-4, anderson=AndersonConfig())
pair = ds.pair(0)
smaps = ds.coil_maps()
forward_fixed_point(params, pair.y, smaps, pair.mask, cfg)  # warm up
t0 = time.perf_counter()
res = forward_fixed_point(params, pair.y, smaps, pair.mask, cfg)
dt = time.perf_counter() - t0
print(f"{{_kernels.BACKEND:>10}}: {{dt:7.3f}}s for {{res.iters}} iterations "
      f"({{dt / res.iters * 1e3:6.1f}} ms/iter)")
"""


def bench_end_to_end(size):
    print(f"\nfixed-point reconstruction, {size}x{size}, 4 coils, R=4:")
    for backend in ("python", "compiled"):
        if backend == "compiled" and _convx is None:
            print("  compiled: not built")
            continue
        env = dict(os.environ, EQMRI_KERNELS=backend)
        subprocess.run(
            [sys.executable, "-c", _E2E_SNIPPET.format(size=size)], env=env, check=True
        )


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="16,32,64", help="comma-separated image sizes")
    ap.add_argument("--channels", type=int, default=16)
    ap.add_argument("--ksize", type=int, default=3)
    ap.add_argument("--repeats", type=int, default=10)
    ap.add_argument("--end-to-end", action="store_true", help="also time a full reconstruction")
    ap.add_argument("--e2e-size", type=int, default=32)
    args = ap.parse_args()

    if _convx is None:
        print("compiled backend not built; timing the python fallback only\n")
    bench_primitives([int(s) for s in args.sizes.split(",")], args.channels, args.ksize, args.repeats)
    if args.end_to_end:
        bench_end_to_end(args.e2e_size)


if __name__ == "__main__":
    main()
