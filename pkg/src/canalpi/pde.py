"""Nonlinear method-of-lines simulator for the PI-controlled channel.

Non-conservative (H, V) form with 4th-order central differences, a scaled
4th-difference dissipation, and classical RK4 in time. The inflow boundary
imposes H V = Q0(t) against the extrapolated outgoing invariant; the
downstream boundary imposes the gate/controller relation (pure PI,
feedforward-augmented, or pinned height for target generation).

The initial profile for closed-loop experiments is produced by Newton-solving
the discrete steady equations (the same difference operator that advances the
state), so the equilibrium is preserved to machine precision.
"""

import io
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from . import fd
from .channel import ChannelConfig, Grid, slope_at, validate_regime
from .errors import BoundarySolveError, CFLError, ConfigError, RegimeError
from .kernels import (BACKEND, FAIL_REGIME, KERNELS, MODE_FEEDFORWARD,
                      MODE_PINNED, MODE_PURE_PI, OK, kernels_for)
from .steady import InflowSignal, Profile, solve_steady

SIGMA_COEF = 0.02
CFL_DEFAULT = 0.4

_VARIANT_MODE = {"pure_pi": MODE_PURE_PI, "feedforward": MODE_FEEDFORWARD, "pinned": MODE_PINNED}


@dataclass(frozen=True)
class ControllerSpec:
    """Downstream boundary law.

    pure_pi:      H V(L) = v_G (1+k_p) H(L) - v_G k_p H_c - v_G k_I Z
    feedforward:  H V(L) = f(t) + v_G (1+k_p)(H(L) - H_c) - v_G k_I Z,
                  with f(t) the target flux at L (feedforward_flux callable)
    pinned:       H(L) = H_c (used to generate target trajectories)
    """

    k_p: float
    k_I: float
    h_c: float
    variant: str = "pure_pi"
    feedforward_flux: object = None

    def __post_init__(self):
        if self.h_c <= 0:
            raise ConfigError("setpoint h_c must be positive")
        if self.variant not in _VARIANT_MODE:
            raise ConfigError(f"unknown controller variant {self.variant!r}")
        if self.variant == "feedforward" and self.feedforward_flux is None:
            raise ConfigError("feedforward variant needs feedforward_flux")

    @property
    def mode(self):
        return _VARIANT_MODE[self.variant]

    def flux_at(self, t):
        return float(self.feedforward_flux(t)) if self.variant == "feedforward" else 0.0


@dataclass
class SimState:
    """Instantaneous simulator state: time, profile and integrator value."""

    t: float
    profile: Profile
    z: float


@dataclass
class TrajectoryRecord:
    """Recorded run: dense per-step series plus sampled snapshots."""

    grid: Grid
    params: dict
    # dense, one entry per accepted step (first entry is the initial state)
    t_dense: np.ndarray = None
    mass: np.ndarray = None
    flux_in: np.ndarray = None
    flux_out: np.ndarray = None
    h_end: np.ndarray = None
    z_dense: np.ndarray = None
    # sampled
    t_samples: np.ndarray = None
    snapshots: list = field(default_factory=list)
    z_samples: np.ndarray = None
    h2_dev: np.ndarray = None
    l2_dev: np.ndarray = None
    ctrl_residual: np.ndarray = None

    def profile_at(self, idx, role="state"):
        H, V = self.snapshots[idx]
        return Profile(grid=self.grid, H=H, V=V, role=role)

    def to_csv(self, path):
        buf = io.StringIO()
        buf.write("t,h2_dev,l2_dev,Z,H_L,flux_in,flux_out,ctrl_residual\n")
        dense_at = {t: i for i, t in enumerate(self.t_dense)}
        for i, t in enumerate(self.t_samples):
            j = dense_at.get(t)
            if j is None:
                j = int(np.argmin(np.abs(self.t_dense - t)))
            buf.write(",".join(f"{v:.17g}" for v in (
                t, self.h2_dev[i], self.l2_dev[i], self.z_samples[i],
                self.snapshots[i][0][-1], self.flux_in[j], self.flux_out[j],
                self.ctrl_residual[i])) + "\n")
        with open(path, "w") as fh:
            fh.write(buf.getvalue())

    def snapshots_to_csv(self, directory):
        import os

        os.makedirs(directory, exist_ok=True)
        for i, t in enumerate(self.t_samples):
            self.profile_at(i).to_csv(
                os.path.join(directory, f"snapshot_{i:05d}.csv"), params={"t": t})

    def manifest(self):
        return dict(self.params)


def default_sigma(profile: Profile, g):
    """Dissipation scale 0.02 * max lambda1 of a reference profile."""
    return SIGMA_COEF * float(np.max(profile.V + np.sqrt(g * profile.H)))


def invariant_anchors(profile: Profile, g):
    """Boundary-region values of the outgoing invariants of a profile.

    The boundary closures extrapolate the deviation of the invariants from
    these anchors, which makes the anchored profile an exact fixed point of
    the boundary treatment.
    """
    H, V = profile.H, profile.V
    rm = V - 2.0 * np.sqrt(g * H)
    rp = V + 2.0 * np.sqrt(g * H)
    return np.array([rm[0], rm[1], rm[2], rp[-1], rp[-2], rp[-3]])


ZERO_ANCHORS = np.zeros(6)


def _delta4(f):
    n = len(f)
    d = np.zeros(n)
    d[2:n - 2] = f[:n - 4] - 4.0 * f[1:n - 3] + 6.0 * f[2:n - 2] - 4.0 * f[3:n - 1] + f[4:]
    d[1] = f[0] - 4.0 * f[1] + 6.0 * f[2] - 4.0 * f[3] + f[4]
    d[n - 2] = f[n - 5] - 4.0 * f[n - 4] + 6.0 * f[n - 3] - 4.0 * f[n - 2] + f[n - 1]
    return d


def interior_rhs(cfg: ChannelConfig, state, sigma=None):
    """Semi-discrete time derivatives (dH/dt, dV/dt) at every node.

    Matches the stepping kernel on interior nodes; the two boundary nodes use
    one-sided differences of the same order with no dissipation (they are
    algebraic during time stepping). Accepts a Profile or a SimState.
    """
    profile = state.profile if isinstance(state, SimState) else state
    report = validate_regime(cfg, profile)
    if not report:
        raise RegimeError("state fails the regime check", )
    if sigma is None:
        sigma = default_sigma(profile, cfg.g)
    n = profile.grid.n
    dx = profile.grid.dx
    H, V = profile.H, profile.V
    C = np.asarray(slope_at(cfg, profile.grid.x), dtype=float)
    D = fd.diff_matrix(n, dx, 1)
    dq = D @ (H * V)
    dH = D @ H
    dV = D @ V
    s = sigma / dx
    d4H = _delta4(H)
    d4V = _delta4(V)
    d4H[0] = d4H[n - 1] = 0.0
    d4V[0] = d4V[n - 1] = 0.0
    dtH = -dq - s * d4H
    dtV = -V * dV - cfg.g * dH - cfg.k * V**2 / H + C - s * d4V
    return dtH, dtV


def apply_boundaries(cfg: ChannelConfig, ctrl: ControllerSpec, state: SimState, q0_now,
                     anchors=None):
    """Boundary node values consistent with the extrapolated invariants.

    Returns (H0, V0, HL, VL) without mutating the state. Each end solves a
    scalar equation in H by safeguarded Newton to 1e-12. `anchors` holds the
    invariant values the extrapolation is taken relative to (None: plain
    extrapolation of the full invariant).
    """
    H = np.array(state.profile.H)
    V = np.array(state.profile.V)
    ff = ctrl.flux_at(state.t)
    a = ZERO_ANCHORS if anchors is None else np.asarray(anchors, dtype=float)
    st = KERNELS["apply_bounds"](H, V, state.z, float(q0_now), ff, ctrl.mode,
                                 cfg.v_g, ctrl.k_p, ctrl.k_I, ctrl.h_c, cfg.g, a)
    _raise_status(st, state.t)
    return float(H[0]), float(V[0]), float(H[-1]), float(V[-1])


def _raise_status(status, t, record=None):
    if status == OK:
        return
    if status == FAIL_REGIME:
        exc = RegimeError(f"regime violation at t={t:.6g}", t=t)
    else:
        exc = BoundarySolveError(f"boundary solve failed at t={t:.6g} "
                                 f"({'inflow' if status == 1 else 'outflow'})")
        exc.t = t
    exc.record = record
    raise exc


def cfl_dt(profile: Profile, g, cfl=CFL_DEFAULT):
    return cfl * profile.grid.dx / float(np.max(np.abs(profile.V) + np.sqrt(g * profile.H)))


def step(cfg: ChannelConfig, ctrl: ControllerSpec, state: SimState,
         inflow: InflowSignal, dt, sigma=None, cfl=CFL_DEFAULT, anchors=None) -> SimState:
    """Advance one RK4 step of the coupled (H, V, Z) system."""
    limit = cfl_dt(state.profile, cfg.g, cfl)
    if dt > limit * (1 + 1e-12):
        raise CFLError(f"dt={dt:.3g} exceeds the CFL bound {limit:.3g}")
    if sigma is None:
        sigma = default_sigma(state.profile, cfg.g)
    grid = state.profile.grid
    C = np.asarray(slope_at(cfg, grid.x), dtype=float)
    H = np.array(state.profile.H)
    V = np.array(state.profile.V)
    Hout = np.empty_like(H)
    Vout = np.empty_like(V)
    t = state.t
    q0s = (float(inflow(t)), float(inflow(t + 0.5 * dt)), float(inflow(t + dt)))
    ffs = (ctrl.flux_at(t), ctrl.flux_at(t + 0.5 * dt), ctrl.flux_at(t + dt))
    a = ZERO_ANCHORS if anchors is None else np.asarray(anchors, dtype=float)
    status, z_new = KERNELS["rk4_step"](
        H, V, state.z, dt, grid.dx, cfg.g, cfg.k, C, sigma / grid.dx,
        ctrl.mode, cfg.v_g, ctrl.k_p, ctrl.k_I, ctrl.h_c,
        q0s[0], q0s[1], q0s[2], ffs[0], ffs[1], ffs[2],
        cfg.alpha, cfg.h_max, a, Hout, Vout)
    _raise_status(status, t + dt)
    return SimState(t=t + dt, profile=Profile(grid=grid, H=Hout, V=Vout, role="state"),
                    z=z_new)


def _ctrl_residual(cfg, ctrl, t, H_L, V_L, Z):
    if ctrl.variant == "pinned":
        return abs(H_L - ctrl.h_c)
    w = cfg.v_g * (1.0 + ctrl.k_p)
    if ctrl.variant == "pure_pi":
        target = w * H_L - cfg.v_g * ctrl.k_p * ctrl.h_c - cfg.v_g * ctrl.k_I * Z
    else:
        target = ctrl.flux_at(t) + w * (H_L - ctrl.h_c) - cfg.v_g * ctrl.k_I * Z
    return abs(H_L * V_L - target)


def run(cfg: ChannelConfig, ctrl: ControllerSpec, initial: SimState,
        inflow: InflowSignal, horizon, sample_every, sigma=None, cfl=CFL_DEFAULT,
        reference=None, backend=None) -> TrajectoryRecord:
    """Advance the closed loop over [t0, t0 + horizon], recording as it goes.

    dt follows the CFL bound each step and is shortened to land exactly on
    sample instants. Deviation norms at samples are measured against
    `reference`: None (the initial profile), a Profile, or a callable
    t -> (H_ref, V_ref). Terminates by raising RegimeError or
    BoundarySolveError with the failing time and the partial record attached.
    """
    from .analysis import h2_norm, l2_norm

    kern = KERNELS if backend is None else kernels_for(backend)
    grid = initial.profile.grid
    n, dx = grid.n, grid.dx
    if n < 7:
        raise ConfigError("simulation grid needs at least 7 nodes")
    if horizon <= 0 or sample_every <= 0:
        raise ConfigError("horizon and sample_every must be positive")
    if not validate_regime(cfg, initial.profile):
        raise RegimeError("initial state fails the regime check", t=initial.t)
    if sigma is None:
        sigma = default_sigma(initial.profile, cfg.g)
    C = np.asarray(slope_at(cfg, grid.x), dtype=float)
    w_simpson = fd.simpson_weights(n, dx)

    if reference is None:
        ref_H, ref_V = np.array(initial.profile.H), np.array(initial.profile.V)
        ref = lambda t: (ref_H, ref_V)  # noqa: E731
    elif isinstance(reference, Profile):
        ref = lambda t, _p=reference: (_p.H, _p.V)  # noqa: E731
    else:
        ref = reference

    params = {
        "backend": BACKEND if backend is None else backend,
        "g": cfg.g, "k": cfg.k, "L": cfg.L, "v_g": cfg.v_g,
        "alpha": cfg.alpha, "h_max": cfg.h_max,
        "k_p": ctrl.k_p, "k_I": ctrl.k_I, "h_c": ctrl.h_c,
        "variant": ctrl.variant, "n": n, "dx": dx, "sigma": sigma, "cfl": cfl,
        "horizon": horizon, "sample_every": sample_every,
        "t0": initial.t, "z0": initial.z,
        "inflow": inflow.to_dict(),
    }
    rec = TrajectoryRecord(grid=grid, params=params)
    t_dense, mass, flin, flout, hend, zdense = [], [], [], [], [], []
    t_s, snaps, z_s, h2_s, l2_s, res_s = [], [], [], [], [], []

    H = np.array(initial.profile.H)
    V = np.array(initial.profile.V)
    Z = float(initial.z)
    t0 = float(initial.t)
    t = t0
    t_end = t0 + horizon

    anchors = invariant_anchors(initial.profile, cfg.g)
    st = kern["apply_bounds"](H, V, Z, float(inflow(t)), ctrl.flux_at(t), ctrl.mode,
                              cfg.v_g, ctrl.k_p, ctrl.k_I, ctrl.h_c, cfg.g, anchors)
    _raise_status(st, t)

    def push_dense():
        t_dense.append(t)
        mass.append(float(w_simpson @ H))
        flin.append(float(H[0] * V[0]))
        flout.append(float(H[-1] * V[-1]))
        hend.append(float(H[-1]))
        zdense.append(Z)

    def push_sample():
        t_s.append(t)
        snaps.append((H.copy(), V.copy()))
        z_s.append(Z)
        rH, rV = ref(t)
        h2_s.append(h2_norm(H - rH, V - rV, grid))
        l2_s.append(l2_norm(H - rH, V - rV, grid))
        res_s.append(_ctrl_residual(cfg, ctrl, t, float(H[-1]), float(V[-1]), Z))

    def finalize():
        rec.t_dense = np.array(t_dense)
        rec.mass = np.array(mass)
        rec.flux_in = np.array(flin)
        rec.flux_out = np.array(flout)
        rec.h_end = np.array(hend)
        rec.z_dense = np.array(zdense)
        rec.t_samples = np.array(t_s)
        rec.snapshots = snaps
        rec.z_samples = np.array(z_s)
        rec.h2_dev = np.array(h2_s)
        rec.l2_dev = np.array(l2_s)
        rec.ctrl_residual = np.array(res_s)
        return rec

    push_dense()
    next_sample = t0
    Hout = np.empty(n)
    Vout = np.empty(n)
    eps_t = 1e-9
    while True:
        if t >= next_sample - eps_t * max(1.0, abs(t)):
            push_sample()
            next_sample += sample_every
        if t >= t_end - 1e-12 * max(1.0, abs(t_end)):
            break
        dt_cfl = cfl * dx / float(np.max(np.abs(V) + np.sqrt(cfg.g * H)))
        dt = min(dt_cfl, next_sample - t, t_end - t)
        q0s = (float(inflow(t)), float(inflow(t + 0.5 * dt)), float(inflow(t + dt)))
        ffs = (ctrl.flux_at(t), ctrl.flux_at(t + 0.5 * dt), ctrl.flux_at(t + dt))
        status, Z_new = kern["rk4_step"](
            H, V, Z, dt, dx, cfg.g, cfg.k, C, sigma / dx,
            ctrl.mode, cfg.v_g, ctrl.k_p, ctrl.k_I, ctrl.h_c,
            q0s[0], q0s[1], q0s[2], ffs[0], ffs[1], ffs[2],
            cfg.alpha, cfg.h_max, anchors, Hout, Vout)
        if status != OK:
            push_sample()
            _raise_status(status, t + dt, record=finalize())
        H, Hout = Hout, H
        V, Vout = Vout, V
        Z = Z_new
        t += dt
        push_dense()
    if not t_s or t_s[-1] < t_end - 1e-9:
        push_sample()
    return finalize()


def simulate_target(cfg: ChannelConfig, h_c, initial: SimState, inflow: InflowSignal,
                    horizon, sample_every, sigma=None, cfl=CFL_DEFAULT):
    """Generate the target trajectory: inflow upstream, pinned height at L."""
    ctrl = ControllerSpec(k_p=0.0, k_I=0.0, h_c=h_c, variant="pinned")
    return run(cfg, ctrl, initial, inflow, horizon, sample_every, sigma=sigma, cfl=cfl)


def flux_interpolant(record: TrajectoryRecord):
    """Cubic interpolant of the recorded downstream flux H V(t, L)."""
    return CubicSpline(record.t_dense, record.flux_out)


def discrete_equilibrium(cfg: ChannelConfig, Q, H_c, grid: Grid, sigma,
                         seed: Profile = None, tol=5e-13, max_iter=30) -> Profile:
    """Newton-solve the discrete steady equations on the stepping operator.

    Unknowns are (H, V) at every node; equations are the interior rhs rows
    of the stepping kernel plus the boundary closures used while stepping
    (imposed flux and extrapolated invariant upstream, pinned height and
    extrapolated invariant downstream). The result is an exact fixed point
    of the semi-discrete system to round-off.
    """
    n, dx = grid.n, grid.dx
    if seed is None:
        seed = solve_steady(cfg, Q, H_c, grid)
    C = np.asarray(slope_at(cfg, grid.x), dtype=float)
    rhs_k = kernels_for("numpy")["rhs"]
    g = cfg.g
    sig = sigma / dx
    a = invariant_anchors(seed, g)

    def residual(y):
        H = y[:n]
        V = y[n:]
        if np.any(H <= 0):
            return np.full(2 * n, 1e6)
        dHdt = np.empty(n)
        dVdt = np.empty(n)
        rhs_k(H, V, C, dx, g, cfg.k, sig, dHdt, dVdt)
        rm = V - 2.0 * np.sqrt(g * H)
        rp = V + 2.0 * np.sqrt(g * H)
        G = np.empty(2 * n)
        G[0] = H[0] * V[0] - Q
        G[1:n - 1] = dHdt[1:n - 1]
        G[n - 1] = H[n - 1] - H_c
        G[n] = (rm[0] - a[0]) - (2.0 * (rm[1] - a[1]) - (rm[2] - a[2]))
        G[n + 1:2 * n - 1] = dVdt[1:n - 1]
        G[2 * n - 1] = (rp[n - 1] - a[3]) - (2.0 * (rp[n - 2] - a[4]) - (rp[n - 3] - a[5]))
        return G

    y = np.concatenate([seed.H, seed.V])
    G = residual(y)
    best = float(np.max(np.abs(G)))
    for _ in range(max_iter):
        if best < tol:
            break
        J = np.empty((2 * n, 2 * n))
        for j in range(2 * n):
            h = 1e-7 * max(1.0, abs(y[j]))
            yp = y.copy()
            yp[j] += h
            J[:, j] = (residual(yp) - G) / h
        try:
            dy = np.linalg.solve(J, G)
        except np.linalg.LinAlgError as exc:
            raise RegimeError(f"discrete equilibrium Jacobian is singular: {exc}")
        y = y - dy
        G = residual(y)
        best = float(np.max(np.abs(G)))
    if best > 1e-10:
        raise RegimeError(f"discrete equilibrium Newton stalled (residual {best:.3g})")
    profile = Profile(grid=grid, H=y[:n], V=y[n:], role="steady")
    if not validate_regime(cfg, profile):
        raise RegimeError("discrete equilibrium fails the regime check")
    return profile


def consistent_z(cfg: ChannelConfig, ctrl: ControllerSpec, profile: Profile, ff0=None):
    """Integrator value making the downstream relation exact at a profile."""
    if ctrl.variant == "pinned" or ctrl.k_I == 0.0:
        return 0.0
    H_L = float(profile.H[-1])
    flux_L = float(profile.H[-1] * profile.V[-1])
    w = cfg.v_g * (1.0 + ctrl.k_p)
    if ctrl.variant == "pure_pi":
        return (w * H_L - cfg.v_g * ctrl.k_p * ctrl.h_c - flux_L) / (cfg.v_g * ctrl.k_I)
    ff0 = ctrl.flux_at(0.0) if ff0 is None else ff0
    return (ff0 + w * (H_L - ctrl.h_c) - flux_L) / (cfg.v_g * ctrl.k_I)


def height_bump(grid: Grid, amplitude, center, width, shape="poly"):
    """Compactly supported bump on [center-width, center+width].

    shape="poly": a*(1-s^2)^3, vanishing with two derivatives at the edges
    (enough for the boundary-compatibility construction). shape="smooth":
    a*exp(1 - 1/(1-s^2)), infinitely differentiable, used where measured
    convergence orders must not be limited by the data's smoothness.
    """
    if center - width < 0.1 * grid.L - 1e-12 or center + width > 0.9 * grid.L + 1e-12:
        raise ConfigError("bump support must stay inside [0.1 L, 0.9 L]")
    s = (grid.x - center) / width
    out = np.zeros(grid.n)
    inside = np.abs(s) < 1.0
    if shape == "poly":
        out[inside] = amplitude * (1.0 - s[inside]**2) ** 3
    elif shape == "smooth":
        out[inside] = amplitude * np.exp(1.0 - 1.0 / (1.0 - s[inside]**2))
    else:
        raise ConfigError(f"unknown bump shape {shape!r}")
    return out


def perturbed_state(profile: Profile, dH=None, dV=None, t=0.0, z=0.0) -> SimState:
    H = profile.H + (dH if dH is not None else 0.0)
    V = profile.V + (dV if dV is not None else 0.0)
    return SimState(t=t, profile=Profile(grid=profile.grid, H=H, V=V, role="state"), z=z)
