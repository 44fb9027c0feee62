"""Discrete norms, Lyapunov evaluation, decay fitting and ISS diagnostics."""

import io
import json
from dataclasses import dataclass

import numpy as np

from . import fd
from .channel import Grid
from .errors import DomainError
from .riemann import to_riemann
from .steady import InflowSignal, Profile


@dataclass
class NormSeries:
    """Deviation norms along a trajectory; lyap is None when not evaluated."""

    t: np.ndarray
    h2: np.ndarray
    l2: np.ndarray
    z_abs: np.ndarray
    lyap: np.ndarray = None

    def to_csv(self, path):
        buf = io.StringIO()
        buf.write("t,h2,l2,z_abs,lyap\n")
        lyap = self.lyap if self.lyap is not None else np.full(len(self.t), np.nan)
        for row in zip(self.t, self.h2, self.l2, self.z_abs, lyap):
            buf.write(",".join(f"{v:.17g}" for v in row) + "\n")
        with open(path, "w") as fh:
            fh.write(buf.getvalue())


def l2_norm(dev_H, dev_V, grid: Grid) -> float:
    w = fd.simpson_weights(grid.n, grid.dx)
    return float(np.sqrt(w @ (np.asarray(dev_H)**2 + np.asarray(dev_V)**2)))


def h2_norm(dev_H, dev_V, grid: Grid) -> float:
    """Discrete H^2 norm of the deviation pair.

    sqrt of the Simpson-weighted integral of f^2 + (Df)^2 + (D^2 f)^2 summed
    over both fields, with 4th-order difference operators.
    """
    if grid.n < 7:
        raise DomainError("h2_norm needs at least 7 nodes")
    w = fd.simpson_weights(grid.n, grid.dx)
    D1 = fd.diff_matrix(grid.n, grid.dx, 1)
    D2 = fd.diff_matrix(grid.n, grid.dx, 2)
    total = 0.0
    for f in (np.asarray(dev_H, dtype=float), np.asarray(dev_V, dtype=float)):
        total += w @ (f**2 + (D1 @ f)**2 + (D2 @ f)**2)
    return float(np.sqrt(total))


def _riemann_rate(dev_rate_H, dev_rate_V, base_H, dt_base_H, g):
    """Time derivative of the Riemann coordinates of a deviation.

    d/dt u = dv/dt +- (sqrt(g/H1) dh/dt + h d/dt sqrt(g/H1)); the last term
    vanishes for steady bases and is kept for moving targets.
    """
    w = np.sqrt(g / base_H)
    dwdt = -0.5 * w * dt_base_H / base_H
    return dev_rate_V + w * dev_rate_H, dev_rate_V - w * dev_rate_H, dwdt


def lyapunov_value(cert, state, target: Profile, rhs_evaluator,
                   target_rhs=None, z_ref=0.0, dtu_pair=None):
    """Evaluate (V_a, V_b, V_c, V) of the certificate along a state.

    u comes from the Riemann map around the target; time derivatives of u are
    obtained from the semi-discrete rhs of the state minus that of the target
    (zero for steady targets); second time derivatives need dtu_pair, a pair
    ((t_prev, du1, du2), (t_next, du1, du2)) of neighbouring first
    derivatives -- when absent V_c is reported as None and omitted from V.
    Zdot = H_c - H(t, L) and Zddot = -dH/dt(t, L).
    """
    grid = target.grid
    g = cert.fields.g
    x = grid.x
    w_simpson = fd.simpson_weights(grid.n, grid.dx)
    w1 = cert.f1 * np.exp(-cert.mu * x)
    w2 = cert.f2 * np.exp(cert.mu * x)

    def quad(u1, u2):
        return float(w_simpson @ (w1 * u1**2 + w2 * u2**2))

    u1, u2 = to_riemann(state.profile, target, g)
    z_dev = state.z - z_ref
    va = quad(u1, u2) + cert.q * z_dev**2

    dtH_s, dtV_s = rhs_evaluator(state.profile)
    if target_rhs is None:
        dtH_t = np.zeros(grid.n)
        dtV_t = np.zeros(grid.n)
    else:
        dtH_t, dtV_t = target_rhs
    h = state.profile.H - target.H
    dev_rate_H = dtH_s - dtH_t
    dev_rate_V = dtV_s - dtV_t
    du1, du2, dwdt = _riemann_rate(dev_rate_H, dev_rate_V, target.H, dtH_t, g)
    du1 = du1 + h * dwdt
    du2 = du2 - h * dwdt
    zdot = float(target.H[-1]) - float(state.profile.H[-1])
    vb = quad(du1, du2) + cert.q * zdot**2

    vc = None
    if dtu_pair is not None:
        (t_m, du1_m, du2_m), (t_p, du1_p, du2_p) = dtu_pair
        ddu1 = (du1_p - du1_m) / (t_p - t_m)
        ddu2 = (du2_p - du2_m) / (t_p - t_m)
        zddot = -float(dtH_s[-1])
        vc = quad(ddu1, ddu2) + cert.q * zddot**2
    total = va + vb + (vc if vc is not None else 0.0)
    return va, vb, vc, total


def lyapunov_series(record, cert, target_provider, rhs_evaluator, z_ref=0.0) -> NormSeries:
    """NormSeries along a recorded run, with the Lyapunov column filled.

    target_provider: None (steady target = certificate base), a Profile, or a
    callable t -> (Profile, target_rhs). Second time derivatives use centered
    differences of the first derivatives across adjacent samples; the end
    samples reuse their one-sided neighbour spacing.
    """
    base = cert.fields.base
    grid = record.grid
    g = cert.fields.g
    ts = record.t_samples
    m = len(ts)

    def target_at(t):
        if target_provider is None:
            return base, None
        if isinstance(target_provider, Profile):
            return target_provider, None
        return target_provider(t)

    rates = []
    states = []
    for i, t in enumerate(ts):
        prof = record.profile_at(i)
        target, target_rhs = target_at(t)
        dtH_s, dtV_s = rhs_evaluator(prof)
        if target_rhs is None:
            dtH_t = np.zeros(grid.n)
            dtV_t = np.zeros(grid.n)
        else:
            dtH_t, dtV_t = target_rhs
        h = prof.H - target.H
        du1, du2, dwdt = _riemann_rate(dtH_s - dtH_t, dtV_s - dtV_t, target.H, dtH_t, g)
        rates.append((t, du1 + h * dwdt, du2 - h * dwdt))
        states.append((prof, target, target_rhs, dtH_s))

    h2 = np.empty(m)
    l2 = np.empty(m)
    z_abs = np.empty(m)
    lyap = np.empty(m)
    x = grid.x
    w_simpson = fd.simpson_weights(grid.n, grid.dx)
    w1 = cert.f1 * np.exp(-cert.mu * x)
    w2 = cert.f2 * np.exp(cert.mu * x)
    for i, t in enumerate(ts):
        prof, target, target_rhs, dtH_s = states[i]
        u1, u2 = to_riemann(prof, target, g)
        h2[i] = h2_norm(prof.H - target.H, prof.V - target.V, grid)
        l2[i] = l2_norm(prof.H - target.H, prof.V - target.V, grid)
        z_dev = record.z_samples[i] - z_ref
        z_abs[i] = abs(z_dev)
        va = float(w_simpson @ (w1 * u1**2 + w2 * u2**2)) + cert.q * z_dev**2
        _, du1, du2 = rates[i]
        zdot = float(target.H[-1]) - float(prof.H[-1])
        vb = float(w_simpson @ (w1 * du1**2 + w2 * du2**2)) + cert.q * zdot**2
        lo = max(i - 1, 0)
        hi = min(i + 1, m - 1)
        if hi > lo:
            dts = rates[hi][0] - rates[lo][0]
            ddu1 = (rates[hi][1] - rates[lo][1]) / dts
            ddu2 = (rates[hi][2] - rates[lo][2]) / dts
            zddot = -float(dtH_s[-1])
            vc = float(w_simpson @ (w1 * ddu1**2 + w2 * ddu2**2)) + cert.q * zddot**2
        else:
            vc = 0.0
        lyap[i] = va + vb + vc
    return NormSeries(t=ts.copy(), h2=h2, l2=l2, z_abs=z_abs, lyap=lyap)


def fit_decay(t, values, t_start):
    """Least-squares exponential rate of a positive series after t_start.

    Returns (gamma, r_squared) from the slope of log(values) against t.
    """
    t = np.asarray(t, dtype=float)
    values = np.asarray(values, dtype=float)
    mask = t >= t_start
    if int(np.sum(mask)) < 20:
        raise DomainError("need at least 20 samples after t_start")
    tw = t[mask]
    vw = values[mask]
    if np.any(vw <= 0):
        raise DomainError("series must be strictly positive in the fit window")
    y = np.log(vw)
    slope, intercept = np.polyfit(tw, y, 1)
    pred = slope * tw + intercept
    ss_res = float(np.sum((y - pred)**2))
    ss_tot = float(np.sum((y - np.mean(y))**2))
    r2 = 1.0 if ss_tot < 1e-300 else 1.0 - ss_res / ss_tot
    return float(-slope), float(r2)


@dataclass(frozen=True)
class ISSReport:
    """Empirical ISS diagnostics over the post-transient window."""

    regime: str            # "iss" | "exponential"
    gain: float            # sup deviation / sup forcing (None in exponential regime)
    dev_sup: float
    forcing_sup: float
    trend_fraction: float  # |linear trend| * window span / dev_sup
    bounded: bool

    def to_dict(self):
        return {
            "regime": self.regime,
            "gain": self.gain,
            "dev_sup": self.dev_sup,
            "forcing_sup": self.forcing_sup,
            "trend_fraction": self.trend_fraction,
            "bounded": self.bounded,
        }


def iss_check(t, deviation, inflow: InflowSignal, horizon,
              transient_periods=5) -> ISSReport:
    """Bounded-deviation check with an empirical disturbance gain.

    The forcing size is sup over the window of |dQ0/dt| + |d2Q0/dt2|
    + |d3Q0/dt3|; the window starts after `transient_periods` forcing
    periods. Constant inflow collapses to the exponential regime and no gain
    is reported.
    """
    t = np.asarray(t, dtype=float)
    deviation = np.asarray(deviation, dtype=float)
    if inflow.variant == "constant":
        dev_sup = float(np.max(deviation))
        return ISSReport(regime="exponential", gain=None, dev_sup=dev_sup,
                         forcing_sup=0.0, trend_fraction=0.0, bounded=True)
    if inflow.variant != "sinusoid":
        raise DomainError("iss_check needs a sinusoidal or constant inflow")
    period = 2.0 * np.pi / inflow.omega
    t_start = transient_periods * period
    if horizon < t_start + period:
        raise DomainError(
            f"window too short: need at least {transient_periods + 1} forcing periods")
    mask = t >= t_start
    tw = t[mask]
    dev = deviation[mask]
    tt = np.linspace(tw[0], tw[-1], 4096)
    forcing = (np.abs(inflow.derivative(tt, 1)) + np.abs(inflow.derivative(tt, 2))
               + np.abs(inflow.derivative(tt, 3)))
    forcing_sup = float(np.max(forcing))
    dev_sup = float(np.max(dev))
    slope = harmonic_trend(tw, dev, inflow.omega)
    span = float(tw[-1] - tw[0])
    trend = abs(slope) * span / dev_sup if dev_sup > 0 else 0.0
    return ISSReport(regime="iss", gain=dev_sup / forcing_sup, dev_sup=dev_sup,
                     forcing_sup=forcing_sup, trend_fraction=trend,
                     bounded=trend < 0.1)


def harmonic_trend(t, values, omega, harmonics=(1, 2)):
    """Linear-trend coefficient with the periodic content regressed away.

    Least squares on [1, t, sin(k w t), cos(k w t)]; returns the slope of
    the t column, immune to the phase artifacts a plain line fit suffers on
    oscillating series over non-integer numbers of periods.
    """
    t = np.asarray(t, dtype=float)
    cols = [np.ones_like(t), t - t[0]]
    for k in harmonics:
        cols.append(np.sin(k * omega * t))
        cols.append(np.cos(k * omega * t))
    A = np.column_stack(cols)
    coef, *_ = np.linalg.lstsq(A, np.asarray(values, dtype=float), rcond=None)
    return float(coef[1])


def compare_iss_gains(report_a: ISSReport, report_b: ISSReport):
    """Linearity check of the empirical gain across two forcing amplitudes."""
    if report_a.gain is None or report_b.gain is None:
        raise DomainError("both reports must carry a gain")
    ratio = report_a.gain / report_b.gain
    return {"ratio": ratio, "within_25pct": 0.75 <= ratio <= 1.25}


def mass_balance_residual(record, relative_to=None):
    """Max |d/dt int H dx - (flux_in - flux_out)| over the dense series.

    The integral uses Simpson weights (recorded densely); the time derivative
    is a centered difference between adjacent accepted steps. Returns the max
    residual divided by `relative_to` (default: the mean inflow flux).
    """
    t = record.t_dense
    m = record.mass
    net = record.flux_in - record.flux_out
    # centered 3-point derivative, exact to 2nd order on the slightly
    # nonuniform step sequence (steps shrink to land on sample instants)
    dm = t[1:-1] - t[:-2]
    dp = t[2:] - t[1:-1]
    dmdt = (m[:-2] * (-dp / (dm * (dm + dp)))
            + m[1:-1] * ((dp - dm) / (dm * dp))
            + m[2:] * (dm / (dp * (dm + dp))))
    resid = np.abs(dmdt - net[1:-1])
    scale = float(np.mean(record.flux_in)) if relative_to is None else float(relative_to)
    return float(np.max(resid)) / scale


def quadratic_equivalence_bounds(cert, target: Profile):
    """Constants (c_lo, c_hi) with c_lo (l2^2 + Z^2) <= V_a <= c_hi (l2^2 + Z^2).

    Exact at the discrete level: V_a and the discrete l2 norm share the same
    quadrature weights, so nodewise eigenvalue bounds of the 2x2 coordinate
    map give two-sided constants.
    """
    g = cert.fields.g
    x = cert.fields.grid.x
    w1 = cert.f1 * np.exp(-cert.mu * x)
    w2 = cert.f2 * np.exp(cert.mu * x)
    w = np.sqrt(g / target.H)
    # quadratic form in (h, v): w1 (v + w h)^2 + w2 (v - w h)^2
    a = w1 * w**2 + w2 * w**2          # h^2 coefficient
    b = w1 + w2                        # v^2 coefficient
    c = (w1 - w2) * w                  # cross coefficient (h v appears twice)
    tr = a + b
    det = a * b - c**2
    disc = np.sqrt(np.maximum(tr**2 - 4.0 * det, 0.0))
    eig_min = 0.5 * (tr - disc)
    eig_max = 0.5 * (tr + disc)
    c_lo = min(float(np.min(eig_min)), cert.q)
    c_hi = max(float(np.max(eig_max)), cert.q)
    return c_lo, c_hi


def write_report(path, payload: dict):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=float)
