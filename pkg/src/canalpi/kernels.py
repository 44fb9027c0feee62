"""Hot numerical kernels: semi-discrete rhs and the closed-loop RK4 step.

The kernel bodies are written once in numba-compatible numpy and built
twice: plain Python (the fallback) and @njit-compiled. Selection:

    CANALPI_BACKEND=numpy   pure-numpy fallback
    CANALPI_BACKEND=numba   require the compiled path
    unset                   numba when importable, else numpy

Both paths evaluate in the same order with IEEE semantics (no fastmath),
so they agree bitwise; see benchmarks/bench_kernels.py for the speed gap.
"""

import math
import os

import numpy as np

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    njit = None
    HAS_NUMBA = False

from .errors import ConfigError

OK = 0
FAIL_INFLOW = 1
FAIL_OUTFLOW = 2
FAIL_REGIME = 3

MODE_PURE_PI = 0
MODE_FEEDFORWARD = 1
MODE_PINNED = 2

_NEWTON_ITERS = 50
_SCAN_POINTS = 64
_BISECT_ITERS = 200


def _build(deco):
    """Instantiate the kernel set, optionally under a jit decorator."""
    if deco is None:
        deco = lambda f: f  # noqa: E731 - tiny local identity

    @deco
    def rhs(H, V, C, dx, g, k, sig_over_dx, dHdt, dVdt):
        # Interior semi-discrete rhs, 4th-order differences with skewed
        # stencils next to the boundaries plus 4th-difference dissipation.
        # Boundary rows are algebraic and set to zero here.
        n = H.shape[0]
        inv12 = 1.0 / (12.0 * dx)
        q = H * V
        dq = np.empty(n)
        dV = np.empty(n)
        dH = np.empty(n)
        d4H = np.empty(n)
        d4V = np.empty(n)
        dq[2:n - 2] = (q[0:n - 4] - 8.0 * q[1:n - 3] + 8.0 * q[3:n - 1] - q[4:n]) * inv12
        dV[2:n - 2] = (V[0:n - 4] - 8.0 * V[1:n - 3] + 8.0 * V[3:n - 1] - V[4:n]) * inv12
        dH[2:n - 2] = (H[0:n - 4] - 8.0 * H[1:n - 3] + 8.0 * H[3:n - 1] - H[4:n]) * inv12
        dq[1] = (-3.0 * q[0] - 10.0 * q[1] + 18.0 * q[2] - 6.0 * q[3] + q[4]) * inv12
        dV[1] = (-3.0 * V[0] - 10.0 * V[1] + 18.0 * V[2] - 6.0 * V[3] + V[4]) * inv12
        dH[1] = (-3.0 * H[0] - 10.0 * H[1] + 18.0 * H[2] - 6.0 * H[3] + H[4]) * inv12
        dq[n - 2] = (-q[n - 5] + 6.0 * q[n - 4] - 18.0 * q[n - 3] + 10.0 * q[n - 2] + 3.0 * q[n - 1]) * inv12
        dV[n - 2] = (-V[n - 5] + 6.0 * V[n - 4] - 18.0 * V[n - 3] + 10.0 * V[n - 2] + 3.0 * V[n - 1]) * inv12
        dH[n - 2] = (-H[n - 5] + 6.0 * H[n - 4] - 18.0 * H[n - 3] + 10.0 * H[n - 2] + 3.0 * H[n - 1]) * inv12
        d4H[2:n - 2] = H[0:n - 4] - 4.0 * H[1:n - 3] + 6.0 * H[2:n - 2] - 4.0 * H[3:n - 1] + H[4:n]
        d4V[2:n - 2] = V[0:n - 4] - 4.0 * V[1:n - 3] + 6.0 * V[2:n - 2] - 4.0 * V[3:n - 1] + V[4:n]
        d4H[1] = H[0] - 4.0 * H[1] + 6.0 * H[2] - 4.0 * H[3] + H[4]
        d4V[1] = V[0] - 4.0 * V[1] + 6.0 * V[2] - 4.0 * V[3] + V[4]
        d4H[n - 2] = H[n - 5] - 4.0 * H[n - 4] + 6.0 * H[n - 3] - 4.0 * H[n - 2] + H[n - 1]
        d4V[n - 2] = V[n - 5] - 4.0 * V[n - 4] + 6.0 * V[n - 3] - 4.0 * V[n - 2] + V[n - 1]
        dHdt[1:n - 1] = -dq[1:n - 1] - sig_over_dx * d4H[1:n - 1]
        dVdt[1:n - 1] = (-V[1:n - 1] * dV[1:n - 1] - g * dH[1:n - 1]
                         - k * V[1:n - 1] * V[1:n - 1] / H[1:n - 1] + C[1:n - 1]
                         - sig_over_dx * d4V[1:n - 1])
        dHdt[0] = 0.0
        dHdt[n - 1] = 0.0
        dVdt[0] = 0.0
        dVdt[n - 1] = 0.0

    @deco
    def solve_inflow(rm_ext, q0, g, h_guess):
        # root of h*(rm_ext + 2 sqrt(g h)) - q0 in h; Newton then scan+bisect
        tol = 1e-12 * (1.0 + abs(q0))
        h = h_guess
        for _ in range(_NEWTON_ITERS):
            if h <= 0.0:
                h = 1e-9
            c = math.sqrt(g * h)
            f = h * (rm_ext + 2.0 * c) - q0
            if abs(f) < tol:
                return h, OK
            df = rm_ext + 3.0 * c
            if df == 0.0:
                break
            hn = h - f / df
            if hn <= 0.25 * h:
                hn = 0.25 * h
            elif hn >= 4.0 * h:
                hn = 4.0 * h
            h = hn
        lo = h_guess / 8.0
        hi = h_guess * 8.0
        step = (hi - lo) / _SCAN_POINTS
        a = lo
        fa = a * (rm_ext + 2.0 * math.sqrt(g * a)) - q0
        found = False
        b = a
        for i in range(_SCAN_POINTS):
            b = lo + (i + 1) * step
            fb = b * (rm_ext + 2.0 * math.sqrt(g * b)) - q0
            if fa * fb <= 0.0:
                found = True
                break
            a = b
            fa = fb
        if not found:
            return h_guess, FAIL_INFLOW
        for _ in range(_BISECT_ITERS):
            m = 0.5 * (a + b)
            fm = m * (rm_ext + 2.0 * math.sqrt(g * m)) - q0
            if abs(fm) < tol:
                return m, OK
            if fa * fm <= 0.0:
                b = m
            else:
                a = m
                fa = fm
        return 0.5 * (a + b), OK

    @deco
    def solve_outflow(rp_ext, w, cst, g, h_guess):
        # root of h*(rp_ext - 2 sqrt(g h)) - w h - cst in h
        tol = 1e-12 * (1.0 + abs(cst) + abs(w) * h_guess)
        h = h_guess
        for _ in range(_NEWTON_ITERS):
            if h <= 0.0:
                h = 1e-9
            c = math.sqrt(g * h)
            f = h * (rp_ext - 2.0 * c) - w * h - cst
            if abs(f) < tol:
                return h, OK
            df = rp_ext - 3.0 * c - w
            if df == 0.0:
                break
            hn = h - f / df
            if hn <= 0.25 * h:
                hn = 0.25 * h
            elif hn >= 4.0 * h:
                hn = 4.0 * h
            h = hn
        lo = h_guess / 8.0
        hi = h_guess * 8.0
        step = (hi - lo) / _SCAN_POINTS
        a = lo
        fa = a * (rp_ext - 2.0 * math.sqrt(g * a)) - w * a - cst
        found = False
        b = a
        for i in range(_SCAN_POINTS):
            b = lo + (i + 1) * step
            fb = b * (rp_ext - 2.0 * math.sqrt(g * b)) - w * b - cst
            if fa * fb <= 0.0:
                found = True
                break
            a = b
            fa = fb
        if not found:
            return h_guess, FAIL_OUTFLOW
        for _ in range(_BISECT_ITERS):
            m = 0.5 * (a + b)
            fm = m * (rp_ext - 2.0 * math.sqrt(g * m)) - w * m - cst
            if abs(fm) < tol:
                return m, OK
            if fa * fm <= 0.0:
                b = m
            else:
                a = m
                fa = fm
        return 0.5 * (a + b), OK

    @deco
    def apply_bounds(H, V, Z, q0, ff, mode, vg, kp, ki, hc, g, anchors):
        # x=0: extrapolate the outgoing invariant V - 2 sqrt(gH), impose HV=Q0
        # x=L: extrapolate V + 2 sqrt(gH), impose the gate/controller relation.
        # Extrapolation acts on the invariant's deviation from the anchor
        # profile (the run's initial boundary region), so a steady state is
        # an exact fixed point; zero anchors give plain extrapolation.
        n = H.shape[0]
        rm = anchors[0] + 2.0 * ((V[1] - 2.0 * math.sqrt(g * H[1])) - anchors[1]) \
            - ((V[2] - 2.0 * math.sqrt(g * H[2])) - anchors[2])
        h0, st = solve_inflow(rm, q0, g, H[0])
        if st != OK:
            return st
        v0 = q0 / h0
        if g * h0 <= v0 * v0:
            return FAIL_REGIME
        H[0] = h0
        V[0] = v0
        rp = anchors[3] + 2.0 * ((V[n - 2] + 2.0 * math.sqrt(g * H[n - 2])) - anchors[4]) \
            - ((V[n - 3] + 2.0 * math.sqrt(g * H[n - 3])) - anchors[5])
        if mode == MODE_PINNED:
            hL = hc
            vL = rp - 2.0 * math.sqrt(g * hc)
        else:
            w = vg * (1.0 + kp)
            if mode == MODE_PURE_PI:
                cst = -vg * kp * hc - vg * ki * Z
            else:
                cst = ff - vg * (1.0 + kp) * hc - vg * ki * Z
            hL, st = solve_outflow(rp, w, cst, g, H[n - 1])
            if st != OK:
                return st
            vL = (w * hL + cst) / hL
        if g * hL <= vL * vL:
            return FAIL_REGIME
        H[n - 1] = hL
        V[n - 1] = vL
        return OK

    @deco
    def rk4_step(H, V, Z, dt, dx, g, k, C, sig_over_dx,
                 mode, vg, kp, ki, hc,
                 q00, q0h, q01, ff0, ffh, ff1,
                 alpha, hmax, anchors, Hout, Vout):
        # One classical RK4 step of (H, V, Z); boundaries re-applied at every
        # stage, Z driven by the stage value of H(., L). Returns (status, Z).
        n = H.shape[0]
        dHdt = np.empty(n)
        dVdt = np.empty(n)
        accH = np.zeros(n)
        accV = np.zeros(n)
        accZ = 0.0
        Hs = H.copy()
        Vs = V.copy()
        Zs = Z
        for s in range(4):
            if s == 0:
                q0 = q00
                ff = ff0
                wgt = 1.0
            elif s == 3:
                q0 = q01
                ff = ff1
                wgt = 1.0
            else:
                q0 = q0h
                ff = ffh
                wgt = 2.0
            st = apply_bounds(Hs, Vs, Zs, q0, ff, mode, vg, kp, ki, hc, g, anchors)
            if st != OK:
                return st, Z
            rhs(Hs, Vs, C, dx, g, k, sig_over_dx, dHdt, dVdt)
            dZ = hc - Hs[n - 1]
            accH += wgt * dHdt
            accV += wgt * dVdt
            accZ += wgt * dZ
            if s < 3:
                frac = 0.5 if s < 2 else 1.0
                Hs[:] = H + (frac * dt) * dHdt
                Vs[:] = V + (frac * dt) * dVdt
                Zs = Z + frac * dt * dZ
        Hout[:] = H + (dt / 6.0) * accH
        Vout[:] = V + (dt / 6.0) * accV
        Zn = Z + (dt / 6.0) * accZ
        st = apply_bounds(Hout, Vout, Zn, q01, ff1, mode, vg, kp, ki, hc, g, anchors)
        if st != OK:
            return st, Z
        for i in range(n):
            if Hout[i] <= 0.0 or Hout[i] >= hmax or g * Hout[i] - Vout[i] * Vout[i] <= alpha:
                return FAIL_REGIME, Z
        return OK, Zn

    return {"rhs": rhs, "solve_inflow": solve_inflow, "solve_outflow": solve_outflow,
            "apply_bounds": apply_bounds, "rk4_step": rk4_step}


_NUMPY_KERNELS = _build(None)
_NUMBA_KERNELS = _build(njit) if HAS_NUMBA else None


def available_backends():
    return ("numpy", "numba") if HAS_NUMBA else ("numpy",)


def kernels_for(backend):
    """Kernel set for an explicit backend name ('numpy' or 'numba')."""
    if backend == "numpy":
        return _NUMPY_KERNELS
    if backend == "numba":
        if _NUMBA_KERNELS is None:
            raise ConfigError("numba backend requested but numba is unavailable")
        return _NUMBA_KERNELS
    raise ConfigError(f"unknown kernel backend {backend!r}")


def _select_backend():
    choice = os.environ.get("CANALPI_BACKEND", "").strip().lower()
    if choice == "":
        return "numba" if HAS_NUMBA else "numpy"
    if choice in ("numpy", "numba"):
        return choice
    raise ConfigError(f"CANALPI_BACKEND must be 'numpy' or 'numba', got {choice!r}")


BACKEND = _select_backend()
KERNELS = kernels_for(BACKEND)
