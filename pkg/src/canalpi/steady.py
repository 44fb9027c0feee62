"""Steady profiles and the quasi-static family for slowly varying inflow.

The steady problem reduces to a single ODE in H once the flow Q = H*V is
recognized as constant in x; the profile is anchored downstream at
H(L) = H_c and integrated backward to x = 0 with classical RK4.
"""

import io
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from . import fd
from .channel import ChannelConfig, Grid, slope_at, validate_regime
from .errors import ConfigError, DomainError, RegimeError


@dataclass(frozen=True)
class Profile:
    """Space-sampled (H, V) fields on a uniform grid.

    role is one of 'steady', 'quasi_static', 'target', 'state'.
    """

    grid: Grid
    H: np.ndarray
    V: np.ndarray
    role: str = "state"

    def __post_init__(self):
        H = np.asarray(self.H, dtype=float)
        V = np.asarray(self.V, dtype=float)
        if H.shape != (self.grid.n,) or V.shape != (self.grid.n,):
            raise ConfigError("profile arrays must match the grid")
        if np.any(H <= 0):
            raise RegimeError("profile height must be positive everywhere")
        H.setflags(write=False)
        V.setflags(write=False)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "V", V)

    @property
    def flux(self):
        return self.H * self.V

    def to_csv(self, path, params=None):
        """Write columns x, H, V with a comment header carrying the role."""
        extras = "" if not params else " " + " ".join(f"{k}={v:.17g}" for k, v in params.items())
        buf = io.StringIO()
        buf.write(f"# role={self.role}{extras}\n")
        buf.write("x,H,V\n")
        for x, h, v in zip(self.grid.x, self.H, self.V):
            buf.write(f"{x:.17g},{h:.17g},{v:.17g}\n")
        with open(path, "w") as fh:
            fh.write(buf.getvalue())


@dataclass(frozen=True)
class InflowSignal:
    """Upstream flow Q0(t) with analytic time derivatives where available.

    Variants:
        constant:  Q0(t) = q
        sinusoid:  Q0(t) = q + amplitude * sin(omega * t)
        ramp:      Q0(t) = q + rate * min(t, t_end)
        tabulated: cubic interpolation through (t, values)
    """

    variant: str = "constant"
    q: float = 1.0
    amplitude: float = 0.0
    omega: float = 0.0
    rate: float = 0.0
    t_end: float = np.inf
    t_nodes: tuple = ()
    values: tuple = ()

    def __post_init__(self):
        if self.variant not in ("constant", "sinusoid", "ramp", "tabulated"):
            raise ConfigError(f"unknown inflow variant {self.variant!r}")
        if self.variant == "tabulated":
            t = np.asarray(self.t_nodes, dtype=float)
            v = np.asarray(self.values, dtype=float)
            if len(t) < 4 or len(t) != len(v):
                raise ConfigError("tabulated inflow needs >= 4 (t, value) pairs")
            object.__setattr__(self, "_spline", CubicSpline(t, v))

    def __call__(self, t):
        if self.variant == "constant":
            return self.q + np.zeros_like(np.asarray(t, dtype=float)) if np.ndim(t) else self.q
        if self.variant == "sinusoid":
            return self.q + self.amplitude * np.sin(self.omega * np.asarray(t))
        if self.variant == "ramp":
            return self.q + self.rate * np.minimum(np.asarray(t, dtype=float), self.t_end)
        return self._spline(t)

    def derivative(self, t, order=1):
        """Time derivative d^order Q0 / dt^order, order in {1, 2, 3}."""
        if order not in (1, 2, 3):
            raise DomainError("derivative order must be 1, 2 or 3")
        if self.variant == "constant":
            return np.zeros_like(np.asarray(t, dtype=float)) if np.ndim(t) else 0.0
        if self.variant == "sinusoid":
            a, w = self.amplitude, self.omega
            phase = [np.cos, lambda s: -np.sin(s), lambda s: -np.cos(s)][order - 1]
            return a * w**order * phase(w * np.asarray(t))
        if self.variant == "ramp":
            if order == 1:
                base = np.where(np.asarray(t, dtype=float) < self.t_end, self.rate, 0.0)
                return base if np.ndim(t) else float(base)
            return np.zeros_like(np.asarray(t, dtype=float)) if np.ndim(t) else 0.0
        return self._spline(t, order)

    def derivative_sup(self, order=1):
        """Closed-form sup norm of a derivative (sinusoid and ramp variants)."""
        if self.variant == "constant":
            return 0.0
        if self.variant == "sinusoid":
            return abs(self.amplitude) * self.omega**order
        if self.variant == "ramp":
            return abs(self.rate) if order == 1 else 0.0
        raise DomainError("no closed-form derivative bound for tabulated inflow")

    def check_positive(self, horizon, samples=2048):
        t = np.linspace(0.0, horizon, samples)
        if np.any(np.asarray(self(t)) <= 0):
            raise ConfigError("inflow must stay positive over the scenario horizon")

    def to_dict(self):
        d = {"variant": self.variant, "q": self.q}
        if self.variant == "sinusoid":
            d.update(amplitude=self.amplitude, omega=self.omega)
        elif self.variant == "ramp":
            d.update(rate=self.rate, t_end=self.t_end)
        elif self.variant == "tabulated":
            d.update(t=list(self.t_nodes), values=list(self.values))
        return d

    @staticmethod
    def from_dict(d):
        variant = d.get("variant", "constant")
        if variant == "tabulated":
            return InflowSignal(variant=variant, t_nodes=tuple(d["t"]), values=tuple(d["values"]))
        return InflowSignal(
            variant=variant,
            q=float(d.get("q", 1.0)),
            amplitude=float(d.get("amplitude", 0.0)),
            omega=float(d.get("omega", 0.0)),
            rate=float(d.get("rate", 0.0)),
            t_end=float(d.get("t_end", np.inf)),
        )


def steady_rhs(cfg: ChannelConfig, H, x, Q):
    """Slope of the reduced steady ODE, dH/dx = (C - k Q^2/H^3)/(g - Q^2/H^3)."""
    if H <= 0:
        raise RegimeError("height must be positive", x=x)
    denom = cfg.g - Q * Q / H**3
    if denom <= 0:
        raise RegimeError("critical flow reached: g*H^3 <= Q^2", x=x)
    return (slope_at(cfg, x) - cfg.k * Q * Q / H**3) / denom


def solve_steady(cfg: ChannelConfig, Q, H_c, grid: Grid) -> Profile:
    """Integrate the steady profile backward from H(L) = H_c.

    Classical 4-stage RK4 at grid resolution; V is set to Q/H nodewise so the
    mass line holds to round-off. Raises RegimeError if the integration loses
    subcriticality, the height collapses, or the cap h_max is exceeded.
    """
    if Q <= 0 or H_c <= 0:
        raise DomainError("Q and H_c must be positive")
    if abs(grid.L - cfg.L) > 1e-12 * max(1.0, cfg.L):
        raise ConfigError("grid length does not match the channel")
    n, dx = grid.n, grid.dx
    H = np.empty(n)
    H[n - 1] = H_c
    h = -dx
    for i in range(n - 1, 0, -1):
        x = grid.x[i]
        Hi = H[i]
        k1 = steady_rhs(cfg, Hi, x, Q)
        k2 = steady_rhs(cfg, Hi + 0.5 * h * k1, x + 0.5 * h, Q)
        k3 = steady_rhs(cfg, Hi + 0.5 * h * k2, x + 0.5 * h, Q)
        k4 = steady_rhs(cfg, Hi + h * k3, x + h, Q)
        H[i - 1] = Hi + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if H[i - 1] <= 0 or H[i - 1] > cfg.h_max:
            raise RegimeError("steady profile left (0, h_max]", x=grid.x[i - 1])
    profile = Profile(grid=grid, H=H, V=Q / H, role="steady")
    report = validate_regime(cfg, profile)
    if not report:
        raise RegimeError(
            f"steady profile fails the regime check (fluvial margin {report.fluvial_margin:.3g}, "
            f"height margin {report.height_margin:.3g})"
        )
    return profile


def steady_residual(cfg: ChannelConfig, profile: Profile) -> float:
    """Max nodal residual of both steady equations, 4th-order differences."""
    x = profile.grid.x
    dx = profile.grid.dx
    H, V = profile.H, profile.V
    mass = fd.derivative(H * V, dx)
    mom = V * fd.derivative(V, dx) + cfg.g * fd.derivative(H, dx) + cfg.k * V**2 / H - slope_at(cfg, x)
    return float(max(np.max(np.abs(mass)), np.max(np.abs(mom))))


def quasi_static_family(cfg: ChannelConfig, inflow: InflowSignal, H_c, grid: Grid, times):
    """Steady profile for the instantaneous inflow Q0(t) at each requested t."""
    profiles = []
    for t in np.asarray(times, dtype=float):
        Q = float(inflow(t))
        try:
            p = solve_steady(cfg, Q, H_c, grid)
        except (RegimeError, DomainError) as exc:
            raise RegimeError(f"quasi-static solve failed at t={t}: {exc}", t=t) from exc
        profiles.append(Profile(grid=grid, H=p.H, V=p.V, role="quasi_static"))
    return profiles
