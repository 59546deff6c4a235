"""Compare the numba and pure-numpy flavours of the hot kernels.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--end-to-end]

Each kernel is warmed up once (JIT compilation is excluded), then timed with
``timeit``; the outputs of both flavours are checked for agreement.  With
``--end-to-end`` the ``rabi-merge`` preset is also run in two subprocesses,
with and without ``QVORTEX_DISABLE_JIT=1``.
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import tempfile
import time
import timeit

import numpy as np

from qvortex import kernels
from qvortex._jit import HAVE_NUMBA


def cases(rng):
    grid = rng.normal(size=(512, 512)) + 1j * rng.normal(size=(512, 512))
    loop = np.exp(1j * np.linspace(0, 40 * np.pi, 100_000))
    pts = rng.uniform(-1, 1, size=(4096, 2))
    nodes = rng.uniform(-1, 1, size=(64, 2))
    pot = rng.uniform(0, 1, size=(512, 512))
    interp_pts = rng.uniform(-8, 8, size=(20_000, 2))
    return {
        "plaquette_charges 512^2": ("plaquette_charges", (grid,)),
        "phase_increments 1e5": ("phase_increments", (loop,)),
        "min_distances 4096x64": ("min_distances", (pts, nodes)),
        "nonlinear_kick 512^2": ("nonlinear_kick", (grid, pot, 500.0, 1e-3 + 0j)),
        "interp_periodic 2e4 pts": ("interp_periodic", (grid, -8.0, 16 / 512, -8.0, 16 / 512, interp_pts)),
    }


def bench(repeat: int) -> None:
    rng = np.random.default_rng(0)
    print(f"{'kernel':28s} {'numpy [ms]':>11s} {'numba [ms]':>11s} {'speed-up':>9s}")
    for label, (name, args) in cases(rng).items():
        f_np = getattr(kernels, f"{name}_numpy")
        f_jit = getattr(kernels, f"{name}_jit")
        ref, got = f_np(*args), f_jit(*args)  # warm-up / compile
        if not np.allclose(ref, got, rtol=1e-10, atol=1e-12):
            raise SystemExit(f"{name}: numba and numpy flavours disagree")
        t_np = min(timeit.repeat(lambda: f_np(*args), number=1, repeat=repeat)) * 1e3
        t_jit = min(timeit.repeat(lambda: f_jit(*args), number=1, repeat=repeat)) * 1e3
        print(f"{label:28s} {t_np:11.2f} {t_jit:11.2f} {t_np / t_jit:8.1f}x")


def end_to_end() -> None:
    for flag in ("0", "1"):
        env = dict(os.environ, QVORTEX_DISABLE_JIT=flag)
        with tempfile.TemporaryDirectory() as out:
            start = time.perf_counter()
            subprocess.run([sys.executable, "-m", "qvortex.cli", "run", "rabi-merge", "--out", out],
                           env=env, check=True, stdout=subprocess.DEVNULL)
            mode = "numpy" if flag == "1" else "numba"
            print(f"rabi-merge preset ({mode}): {time.perf_counter() - start:.2f} s")


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--end-to-end", action="store_true")
    args = p.parse_args()
    if not HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    bench(args.repeat)
    if args.end_to_end:
        end_to_end()


if __name__ == "__main__":
    main()
