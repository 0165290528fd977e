#!/usr/bin/env python3
"""Benchmark the compiled scan kernel against the numpy fallback.

Runs forward and forward+backward at model-realistic sizes, checks that the
backends agree, and prints the speedup table.
"""

import time

import numpy as np

from hsimamba import kernels

SIZES = [
    # (batch, length, d_inner, n_state)   roughly: spectral / spatial / big-batch
    (16, 64, 2, 16),
    (16, 49, 128, 16),
    (64, 49, 128, 16),
    (64, 225, 128, 16),
]
REPEATS = 5


def make_case(rng, shape, dtype=np.float32):
    b, l, d, n = shape
    abar = rng.uniform(0.05, 0.95, (b, l, d, n)).astype(dtype)
    bbar = rng.normal(size=(b, l, d, n)).astype(dtype)
    c = rng.normal(size=(b, l, n)).astype(dtype)
    x = rng.normal(size=(b, l, d)).astype(dtype)
    gy = rng.normal(size=(b, l, d)).astype(dtype)
    return abar, bbar, c, x, gy


def time_backend(name, case):
    abar, bbar, c, x, gy = case
    kernels.use_backend(name)
    kernels.scan_forward(abar, bbar, c, x)  # warm-up
    t0 = time.perf_counter()
    for _ in range(REPEATS):
        y, h = kernels.scan_forward(abar, bbar, c, x)
    fwd = (time.perf_counter() - t0) / REPEATS
    t0 = time.perf_counter()
    for _ in range(REPEATS):
        kernels.scan_backward(abar, bbar, c, x, h, gy)
    bwd = (time.perf_counter() - t0) / REPEATS
    return fwd, bwd, y


def main():
    rng = np.random.default_rng(0)
    backends = kernels.available_backends()
    print(f"available backends: {backends}")
    if len(backends) < 2:
        print("compiled kernel not built; run `pip install -e . --no-build-isolation`")
    header = f"{'(B,L,D,N)':>20} | " + " | ".join(f"{b} fwd/bwd (ms)" for b in backends)
    if len(backends) == 2:
        header += " | speedup fwd/bwd"
    print(header)
    print("-" * len(header))
    for shape in SIZES:
        case = make_case(rng, shape)
        results = {}
        outputs = {}
        for b in backends:
            fwd, bwd, y = time_backend(b, case)
            results[b] = (fwd, bwd)
            outputs[b] = y
        if len(backends) == 2:
            ref, alt = outputs["numpy"], outputs["cython"]
            # f32 reduction order differs between the backends; scale-aware bound
            bound = 1e-4 * max(1.0, float(np.abs(ref).max()))
            if not np.allclose(ref, alt, rtol=1e-4, atol=bound):
                raise SystemExit(f"backend outputs disagree at {shape}")
        row = f"{str(shape):>20} | " + " | ".join(
            f"{results[b][0] * 1e3:8.2f}/{results[b][1] * 1e3:8.2f}" for b in backends
        )
        if len(backends) == 2:
            row += (
                f" | {results['numpy'][0] / results['cython'][0]:5.1f}x"
                f"/{results['numpy'][1] / results['cython'][1]:5.1f}x"
            )
        print(row)
    kernels.use_backend("cython" if "cython" in backends else "numpy")


if __name__ == "__main__":
    main()
