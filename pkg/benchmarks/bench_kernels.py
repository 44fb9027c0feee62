"""Benchmark the RK4 step kernel: numba backend vs the pure-numpy fallback.

Usage: python benchmarks/bench_kernels.py [n_nodes ...]
"""

import sys
import time

import numpy as np

import canalpi as cp
from canalpi import kernels, pde


def bench(backend, n, steps=2000):
    cfg = cp.ChannelConfig(g=9.81, k=0.1, L=20.0, v_g=1.0, alpha=1.0, h_max=10.0)
    grid = cp.Grid(n=n, L=cfg.L)
    seed = cp.solve_steady(cfg, 2.0, 2.0, grid)
    sigma = pde.default_sigma(seed, cfg.g)
    eq = pde.discrete_equilibrium(cfg, 2.0, 2.0, grid, sigma, seed=seed)
    ctrl = cp.ControllerSpec(k_p=1.0, k_I=0.2, h_c=2.0)
    z0 = pde.consistent_z(cfg, ctrl, eq)
    bump = pde.height_bump(grid, 2e-3, 10.0, 6.0)
    kern = kernels.kernels_for(backend)["rk4_step"]
    C = np.asarray(cp.slope_at(cfg, grid.x))
    anchors = pde.invariant_anchors(eq, cfg.g)
    H = eq.H + bump
    V = np.array(eq.V)
    Z = z0
    dt = 0.8 * pde.cfl_dt(eq, cfg.g)
    Hout = np.empty(n)
    Vout = np.empty(n)
    # warm-up (compiles the numba path)
    kern(H.copy(), V.copy(), Z, dt, grid.dx, cfg.g, cfg.k, C, sigma / grid.dx,
         0, cfg.v_g, ctrl.k_p, ctrl.k_I, ctrl.h_c, 2.0, 2.0, 2.0, 0.0, 0.0, 0.0,
         cfg.alpha, cfg.h_max, anchors, Hout, Vout)
    t0 = time.perf_counter()
    for _ in range(steps):
        status, Z = kern(H, V, Z, dt, grid.dx, cfg.g, cfg.k, C, sigma / grid.dx,
                         0, cfg.v_g, ctrl.k_p, ctrl.k_I, ctrl.h_c,
                         2.0, 2.0, 2.0, 0.0, 0.0, 0.0,
                         cfg.alpha, cfg.h_max, anchors, Hout, Vout)
        assert status == kernels.OK
        H, Hout = Hout, H
        V, Vout = Vout, V
    elapsed = time.perf_counter() - t0
    return elapsed / steps, float(H[-1])


def main():
    sizes = [int(a) for a in sys.argv[1:]] or [101, 201, 401, 801]
    backends = kernels.available_backends()
    print(f"backends: {', '.join(backends)}; {2000} RK4 steps per measurement")
    print(f"{'n':>6} " + " ".join(f"{b:>14}" for b in backends) + f" {'speedup':>9}")
    for n in sizes:
        per = {}
        check = {}
        for b in backends:
            per[b], check[b] = bench(b, n)
        if len(backends) == 2:
            assert abs(check["numpy"] - check["numba"]) < 1e-12, "backends disagree"
            speed = per["numpy"] / per["numba"]
        else:
            speed = float("nan")
        cols = " ".join(f"{per[b] * 1e6:12.1f}us" for b in backends)
        print(f"{n:>6} {cols} {speed:8.1f}x")


if __name__ == "__main__":
    main()
