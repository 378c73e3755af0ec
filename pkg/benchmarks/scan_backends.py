"""Compare the compiled scan kernel against the numpy fallback.

Times scan_fwd and scan_bwd on both backends over a grid of sequence
lengths and checks the outputs agree, so the fallback is known to be a
drop-in replacement. Normal runs pick the backend automatically at
import; set SEQDIFF_BACKEND=numpy or SEQDIFF_BACKEND=cython to force
one side when running the package itself.

Usage: python3 benchmarks/scan_backends.py [--lengths 64,256,1024] [--runs 5]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from seqdiff._kernels import has_compiled, scan_numpy

if has_compiled():
    from seqdiff._kernels import _scan_cy
else:
    _scan_cy = None


def make_operands(rng: np.random.Generator, length: int, dim: int = 32, state: int = 16):
    bs = 4
    x = rng.normal(size=(bs, length, dim)).astype(np.float32)
    Bm = rng.normal(size=(bs, length, state)).astype(np.float32)
    C = rng.normal(size=(bs, length, state)).astype(np.float32)
    # positive step sizes and strictly stable A keep exp(dt*A) in (0, 1)
    dt = rng.uniform(0.01, 0.2, size=(bs, length, dim)).astype(np.float32)
    A = (-rng.uniform(0.2, 1.5, size=(dim, state))).astype(np.float32)
    return x, Bm, C, dt, A


def best_of(fn, runs: int) -> float:
    best = float("inf")
    for _ in range(runs):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--lengths", default="64,256,1024")
    ap.add_argument("--runs", type=int, default=5)
    args = ap.parse_args()
    lengths = [int(s) for s in args.lengths.split(",")]

    if _scan_cy is None:
        raise SystemExit("compiled kernel missing; rebuild with pip install -e . --no-build-isolation")

    rng = np.random.default_rng(0)
    print(f"{'L':>6} {'fwd numpy':>11} {'fwd cython':>11} {'speedup':>8}"
          f" {'bwd numpy':>11} {'bwd cython':>11} {'speedup':>8}")
    for length in lengths:
        ops = make_operands(rng, length)
        y_np, h_np = scan_numpy.scan_fwd(*ops)
        y_cy, h_cy = _scan_cy.scan_fwd(*ops)
        if not np.allclose(y_np, y_cy, atol=1e-4):
            raise SystemExit(f"backend outputs diverge at L={length}")
        dy = np.ones_like(y_np)
        g_np = scan_numpy.scan_bwd(*ops, h_np, dy)
        g_cy = _scan_cy.scan_bwd(*ops, h_cy, dy)
        for a, b in zip(g_np, g_cy):
            if not np.allclose(a, b, atol=1e-3):
                raise SystemExit(f"backend gradients diverge at L={length}")

        f_np = best_of(lambda: scan_numpy.scan_fwd(*ops), args.runs)
        f_cy = best_of(lambda: _scan_cy.scan_fwd(*ops), args.runs)
        b_np = best_of(lambda: scan_numpy.scan_bwd(*ops, h_np, dy), args.runs)
        b_cy = best_of(lambda: _scan_cy.scan_bwd(*ops, h_cy, dy), args.runs)
        print(f"{length:>6} {f_np * 1e3:>9.2f}ms {f_cy * 1e3:>9.2f}ms {f_np / f_cy:>7.1f}x"
              f" {b_np * 1e3:>9.2f}ms {b_cy * 1e3:>9.2f}ms {b_np / b_cy:>7.1f}x")


if __name__ == "__main__":
    main()
