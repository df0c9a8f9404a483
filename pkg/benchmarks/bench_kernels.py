#!/usr/bin/env python3
"""Benchmark the numba gating kernel against the pure-numpy fallback.

Run: python3 benchmarks/bench_kernels.py
Force the numpy path inside the package with PAPTRACK_NUMBA=0.
"""

from __future__ import annotations

import time

import numpy as np

from paptrack import kernels


def make_instance(nq: int, nm: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    q_xy = rng.uniform(-30, 30, size=(nq, 2))
    q_cls = rng.integers(-1, 7, size=nq)
    m_xy = rng.uniform(-30, 30, size=(nm, 2))
    m_cls = rng.integers(0, 7, size=nm)
    return q_xy, q_cls, m_xy, m_cls


def bench(fn, args, repeats: int = 200) -> float:
    fn(*args)  # warmup / JIT
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn(*args)
    return (time.perf_counter() - t0) / repeats


def main() -> None:
    for nq, nm in [(256, 20), (900, 30), (2000, 60)]:
        q_xy, q_cls, m_xy, m_cls = make_instance(nq, nm)
        args = (q_xy, q_cls, m_xy, m_cls, 3.0)
        t_np = bench(lambda *a: kernels._gated_costs_numpy(*a), args)
        if kernels._HAS_NUMBA:
            t_nb = bench(lambda *a: kernels._gated_costs_numba(*a), args)
        else:
            t_nb = float("nan")
        c_np, n_np = kernels._gated_costs_numpy(*args)
        c_nb, n_nb = kernels._gated_costs_numba(*args) if kernels._HAS_NUMBA else (c_np, n_np)
        assert np.array_equal(c_np, c_nb) and n_np == n_nb, "backend mismatch"
        speedup = t_np / t_nb if t_nb == t_nb else float("nan")
        print(f"{nq:5d}x{nm:<3d}  numpy {t_np*1e6:8.1f} us   numba {t_nb*1e6:8.1f} us   speedup {speedup:5.2f}x")


if __name__ == "__main__":
    main()
