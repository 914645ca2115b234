"""Benchmark the compiled kernel core against the pure numpy fallback.

Run from the repository root after an editable install:

    python3 benchmarks/bench_backends.py

Times the three hot kernels on sizes typical for the fitting loops and
prints a speedup table.
"""

import time

import numpy as np

from fracnetid import _core_py

try:
    from fracnetid import _core_cy
except ImportError:
    _core_cy = None


def timeit(fn, *args, repeat=5, warmup=1):
    for _ in range(warmup):
        fn(*args)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def filter_args(rng, n, m, K):
    A12 = rng.normal(size=(n, m)) * 0.4
    A22 = rng.normal(size=(m, m)) * 0.3
    S1 = 0.3 * np.eye(n)
    S2 = 0.2 * np.eye(m)
    psi = _core_py.gl_table(rng.uniform(0.2, 1.2, m), K)
    ctrl = rng.normal(size=(m, K))
    y = rng.normal(size=(n, K))
    z0 = np.zeros(m)
    P0 = np.eye(m)
    G = A12.T @ np.linalg.inv(S1) @ A12
    return A12, A22, S1, 0.5 * (G + G.T), S2, psi, ctrl, y, z0, P0


def main():
    rng = np.random.default_rng(0)
    rows = []

    for C, J in ((4, 512), (24, 2048)):
        alphas = rng.uniform(0.1, 1.5, C)
        t_py = timeit(_core_py.gl_table, alphas, J)
        t_cy = timeit(_core_cy.gl_table, alphas, J) if _core_cy else float("nan")
        rows.append((f"gl_table C={C} J={J}", t_py, t_cy))

    for C, T in ((4, 512), (24, 1024)):
        v = rng.normal(size=(C, T))
        coeffs = _core_py.gl_table(rng.uniform(0.1, 1.5, C), T - 1)
        t_py = timeit(_core_py.frac_diff, v, coeffs)
        t_cy = timeit(_core_cy.frac_diff, v, coeffs) if _core_cy else float("nan")
        rows.append((f"frac_diff C={C} T={T}", t_py, t_cy))

    for n, m, K in ((2, 1, 200), (12, 9, 256), (20, 9, 512)):
        args = filter_args(rng, n, m, K)
        t_py = timeit(_core_py.kalman_sweep, *args)
        t_cy = timeit(_core_cy.kalman_sweep, *args) if _core_cy else float("nan")
        rows.append((f"kalman_sweep n={n} m={m} K={K}", t_py, t_cy))

    print(f"{'kernel':<34} {'numpy (ms)':>12} {'cython (ms)':>12} {'speedup':>9}")
    for name, t_py, t_cy in rows:
        speed = t_py / t_cy if t_cy == t_cy else float("nan")
        print(f"{name:<34} {1e3 * t_py:>12.3f} {1e3 * t_cy:>12.3f} {speed:>8.1f}x")
    if _core_cy is None:
        print("compiled core not available; numpy fallback only")


if __name__ == "__main__":
    main()
