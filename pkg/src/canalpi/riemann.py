"""Linearization fields around a base profile and Riemann-coordinate maps.

Around a subcritical base (H1, V1) the perturbation dynamics diagonalize in
the variables u1 = v + sqrt(g/H1) h, u2 = v - sqrt(g/H1) h, transported at
speeds lambda1 = V1 + sqrt(g H1) and -lambda2 = V1 - sqrt(g H1). Both
characteristic speeds are stored positive.
"""

import io
from dataclasses import dataclass, replace

import numpy as np

from . import fd
from .channel import ChannelConfig, Grid, validate_regime
from .errors import ConfigError, RegimeError
from .steady import Profile


@dataclass(frozen=True)
class RiemannFields:
    """Characteristic speeds, source couplings and exponential weights."""

    grid: Grid
    base: Profile
    lambda1: np.ndarray
    lambda2: np.ndarray
    gamma1: np.ndarray
    gamma2: np.ndarray
    delta1: np.ndarray
    delta2: np.ndarray
    dH1dx: np.ndarray
    dV1dx: np.ndarray
    g: float
    phi1: np.ndarray = None
    phi2: np.ndarray = None
    phi: np.ndarray = None

    def with_phi(self):
        phi1, phi2, phi = phi_weights(self)
        return replace(self, phi1=phi1, phi2=phi2, phi=phi)

    def to_csv(self, path):
        buf = io.StringIO()
        buf.write("x,lambda1,lambda2,gamma1,gamma2,delta1,delta2,phi1,phi2\n")
        phi1 = self.phi1 if self.phi1 is not None else np.full(self.grid.n, np.nan)
        phi2 = self.phi2 if self.phi2 is not None else np.full(self.grid.n, np.nan)
        cols = (self.grid.x, self.lambda1, self.lambda2, self.gamma1,
                self.gamma2, self.delta1, self.delta2, phi1, phi2)
        for row in zip(*cols):
            buf.write(",".join(f"{v:.17g}" for v in row) + "\n")
        with open(path, "w") as fh:
            fh.write(buf.getvalue())


def eigenvalues(g, H, V):
    """Characteristic speeds (lambda1, lambda2), both positive when subcritical."""
    Ha = np.asarray(H, dtype=float)
    Va = np.asarray(V, dtype=float)
    if np.any(Ha <= 0) or np.any(g * Ha <= Va**2):
        raise RegimeError("eigenvalues require the subcritical regime g*H > V^2")
    c = np.sqrt(g * Ha)
    lam1 = Va + c
    lam2 = c - Va
    if np.ndim(H) == 0 and np.ndim(V) == 0:
        return float(lam1), float(lam2)
    return lam1, lam2


def coupling_coefficients(cfg: ChannelConfig, base: Profile) -> RiemannFields:
    """Evaluate the four source-coupling coefficients around a base profile.

    Spatial derivatives of the base use 4th-order differences (one-sided at
    the boundaries) so the same path serves steady, quasi-static and
    simulated bases alike.
    """
    if not validate_regime(cfg, base):
        raise RegimeError("base profile fails the regime check")
    g, k = cfg.g, cfg.k
    H1, V1 = base.H, base.V
    dx = base.grid.dx
    H1x = fd.derivative(H1, dx)
    V1x = fd.derivative(V1, dx)
    lam1, lam2 = eigenvalues(g, H1, V1)
    rgh = np.sqrt(g / H1)          # sqrt(g/H1)
    rhg = np.sqrt(H1 / g)          # sqrt(H1/g)
    fric = k * V1 / H1
    fric2 = (k * V1**2 / (2.0 * H1**2)) * rhg
    gamma1 = 0.75 * rgh * H1x + 0.75 * V1x + fric - fric2
    gamma2 = 0.25 * rgh * H1x + 0.25 * V1x + fric + fric2
    delta1 = -0.25 * rgh * H1x + 0.25 * V1x + fric - fric2
    delta2 = -0.75 * rgh * H1x + 0.75 * V1x + fric + fric2
    return RiemannFields(
        grid=base.grid, base=base, lambda1=lam1, lambda2=lam2,
        gamma1=gamma1, gamma2=gamma2, delta1=delta1, delta2=delta2,
        dH1dx=H1x, dV1dx=V1x, g=g,
    )


def _midpoints(f):
    """4th-order midpoint values on a uniform grid, (-1, 9, 9, -1)/16."""
    n = len(f)
    m = np.empty(n - 1)
    m[1:-1] = (-f[:n - 3] + 9.0 * f[1:n - 2] + 9.0 * f[2:n - 1] - f[3:]) / 16.0
    # one-sided 4-point interpolation at the end intervals
    m[0] = (5.0 * f[0] + 15.0 * f[1] - 5.0 * f[2] + f[3]) / 16.0
    m[-1] = (5.0 * f[-1] + 15.0 * f[-2] - 5.0 * f[-3] + f[-4]) / 16.0
    return m


def _cumulative_simpson(f, dx):
    """Cumulative Simpson with interpolated midpoints.

    Treating every interval with the same (1, 4, 1)/6 rule keeps the
    quadrature error a smooth function of x, so differentiating quantities
    built from the result stays 4th-order accurate.
    """
    incr = (dx / 6.0) * (f[:-1] + 4.0 * _midpoints(f) + f[1:])
    out = np.empty(len(f))
    out[0] = 0.0
    np.cumsum(incr, out=out[1:])
    return out


def phi_weights(fields: RiemannFields):
    """Exponential weights phi1, phi2 and their ratio phi = phi1/phi2.

    Cumulative composite-Simpson quadrature on the grid; requires an odd
    node count so the half-grid pairing is complete.
    """
    n = fields.grid.n
    if n % 2 == 0:
        raise ConfigError("phi weights need an odd node count")
    dx = fields.grid.dx
    i1 = _cumulative_simpson(fields.gamma1 / fields.lambda1, dx)
    i2 = _cumulative_simpson(fields.delta2 / fields.lambda2, dx)
    phi1 = np.exp(i1)
    phi2 = np.exp(-i2)
    return phi1, phi2, phi1 / phi2


def to_riemann(state: Profile, base: Profile, g: float):
    """Map a state to perturbation Riemann coordinates around the base."""
    if state.grid != base.grid:
        raise ConfigError("state and base must share the grid")
    h = state.H - base.H
    v = state.V - base.V
    w = np.sqrt(g / base.H)
    return v + w * h, v - w * h


def from_riemann(u1, u2, base: Profile, g: float):
    """Inverse map: deviation fields (h, v) from Riemann coordinates."""
    u1 = np.asarray(u1, dtype=float)
    u2 = np.asarray(u2, dtype=float)
    h = 0.5 * (u1 - u2) * np.sqrt(base.H / g)
    v = 0.5 * (u1 + u2)
    return h, v
