"""Benchmark the phantom rasterizer backends against each other.

Renders the same motion programs through the compiled kernel and the numpy
fallback, reports throughput, and verifies the outputs are bit-identical.

Usage: python benchmarks/bench_render.py [--size 128] [--repeats 3]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from echotiming import _kernels
from echotiming.core import View
from echotiming.synth import PhantomConfig, render_recording, sample_motion_program


def bench(backend: str, programs, config: PhantomConfig, repeats: int) -> tuple[float, int]:
    best = float("inf")
    frames = 0
    for _ in range(repeats):
        start = time.perf_counter()
        frames = 0
        for program in programs:
            rec, _ = render_recording(program, View.A4CH, config, backend=backend)
            frames += rec.n_frames
        best = min(best, time.perf_counter() - start)
    return best, frames


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--size", type=int, default=128)
    parser.add_argument("--n-programs", type=int, default=8)
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()

    config = PhantomConfig(image_size=args.size, noise_level=0.0)
    programs = [sample_motion_program(seed, config) for seed in range(args.n_programs)]
    backends = _kernels.available_backends()
    print(f"backends: {backends} (active: {_kernels.ACTIVE_BACKEND})")

    results = {}
    for backend in backends:
        elapsed, frames = bench(backend, programs, config, args.repeats)
        results[backend] = elapsed
        print(f"{backend:>7}: {frames} frames at {args.size}x{args.size} "
              f"in {elapsed:.3f} s ({frames / elapsed:.1f} fps)")
    if len(backends) == 2:
        print(f"speedup cython/numpy: {results['numpy'] / results['cython']:.2f}x")
        a = render_recording(programs[0], View.A4CH, config, backend="numpy")[0].frames
        b = render_recording(programs[0], View.A4CH, config, backend="cython")[0].frames
        identical = np.array_equal(a, b)
        print(f"outputs bit-identical: {identical}")
        if not identical:
            print(f"  max abs difference: {np.max(np.abs(a.astype(np.float64) - b.astype(np.float64)))}")


if __name__ == "__main__":
    main()
