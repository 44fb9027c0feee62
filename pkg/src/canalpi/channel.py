"""Physical channel description: slope, gravity, friction, regime bounds.

The channel configuration is shared by every other module; all types are
immutable after construction and safe to use concurrently.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import ConfigError, DomainError


@dataclass(frozen=True)
class SlopeSpec:
    """Slope function C(x) on [0, L].

    Variants:
        constant:  C(x) = c0
        affine:    C(x) = c0 + c1 * x
        tabulated: cubic interpolation through (x_nodes, values); at least
                   4 strictly increasing nodes spanning the channel.

    Tabulated slopes interpolate with a cubic spline so that C stays twice
    continuously differentiable, which downstream constructions rely on.
    """

    variant: str = "constant"
    c0: float = 0.0
    c1: float = 0.0
    x_nodes: tuple = ()
    values: tuple = ()
    _spline: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.variant not in ("constant", "affine", "tabulated"):
            raise ConfigError(f"unknown slope variant {self.variant!r}")
        if self.variant == "tabulated":
            x = np.asarray(self.x_nodes, dtype=float)
            v = np.asarray(self.values, dtype=float)
            if len(x) < 4 or len(x) != len(v):
                raise ConfigError("tabulated slope needs >= 4 (x, value) pairs")
            if np.any(np.diff(x) <= 0):
                raise ConfigError("tabulated slope abscissae must be strictly increasing")
            object.__setattr__(self, "x_nodes", tuple(x))
            object.__setattr__(self, "values", tuple(v))
            object.__setattr__(self, "_spline", CubicSpline(x, v))

    def __call__(self, x):
        if self.variant == "constant":
            return self.c0 * np.ones_like(np.asarray(x, dtype=float)) if np.ndim(x) else self.c0
        if self.variant == "affine":
            return self.c0 + self.c1 * np.asarray(x, dtype=float) if np.ndim(x) else self.c0 + self.c1 * x
        out = self._spline(x)
        return out if np.ndim(x) else float(out)

    def to_dict(self):
        if self.variant == "tabulated":
            return {"variant": "tabulated", "x": list(self.x_nodes), "values": list(self.values)}
        if self.variant == "affine":
            return {"variant": "affine", "c0": self.c0, "c1": self.c1}
        return {"variant": "constant", "c0": self.c0}

    @staticmethod
    def from_dict(d):
        variant = d.get("variant", "constant")
        if variant == "tabulated":
            return SlopeSpec(variant="tabulated", x_nodes=tuple(d["x"]), values=tuple(d["values"]))
        return SlopeSpec(variant=variant, c0=float(d.get("c0", 0.0)), c1=float(d.get("c1", 0.0)))


@dataclass(frozen=True)
class ChannelConfig:
    """Channel parameters and regime bounds.

    Attributes:
        g: gravitational acceleration (m/s^2).
        k: friction coefficient (dimensionless, >= 0).
        slope: slope function specification.
        L: channel length (m).
        v_g: gate constant of the downstream hydraulic installation (m/s scale).
        alpha: required fluvial margin, g*H - V^2 > alpha (m^2/s^2).
        h_max: height cap (m).
    """

    g: float = 9.81
    k: float = 0.0
    slope: SlopeSpec = field(default_factory=SlopeSpec)
    L: float = 1.0
    v_g: float = 1.0
    alpha: float = 1.0
    h_max: float = 10.0

    def __post_init__(self):
        if self.g <= 0 or self.L <= 0 or self.v_g <= 0 or self.alpha <= 0 or self.h_max <= 0:
            raise ConfigError("g, L, v_g, alpha and h_max must all be positive")
        if self.k < 0:
            raise ConfigError("friction coefficient k must be nonnegative")

    def to_dict(self):
        return {
            "g": self.g,
            "k": self.k,
            "slope": self.slope.to_dict(),
            "L": self.L,
            "v_g": self.v_g,
            "alpha": self.alpha,
            "h_max": self.h_max,
        }

    @staticmethod
    def from_dict(d):
        try:
            return ChannelConfig(
                g=float(d.get("g", 9.81)),
                k=float(d.get("k", 0.0)),
                slope=SlopeSpec.from_dict(d.get("slope", {})),
                L=float(d["L"]),
                v_g=float(d.get("v_g", 1.0)),
                alpha=float(d.get("alpha", 1.0)),
                h_max=float(d.get("h_max", 10.0)),
            )
        except KeyError as exc:
            raise ConfigError(f"missing channel key: {exc}") from exc
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


@dataclass(frozen=True)
class Grid:
    """Uniform grid on [0, L]. Nonuniform grids are rejected at construction."""

    n: int
    L: float

    def __post_init__(self):
        if self.n < 3:
            raise ConfigError("grid needs at least 3 nodes")
        if self.L <= 0:
            raise ConfigError("grid length must be positive")

    @property
    def x(self):
        return np.linspace(0.0, self.L, self.n)

    @property
    def dx(self):
        return self.L / (self.n - 1)


def slope_at(cfg: ChannelConfig, x):
    """Evaluate the slope C(x); x may be a scalar or an array in [0, L]."""
    xa = np.asarray(x, dtype=float)
    if np.any(xa < -1e-12) or np.any(xa > cfg.L * (1 + 1e-12)):
        raise DomainError(f"slope queried outside [0, {cfg.L}]")
    return cfg.slope(x)


def froude_margin(cfg: ChannelConfig, H, V):
    """Subcriticality margin g*H - V^2 (positive in the fluvial regime)."""
    Ha = np.asarray(H, dtype=float)
    if np.any(Ha <= 0):
        raise DomainError("height must be positive")
    return cfg.g * Ha - np.asarray(V, dtype=float) ** 2


@dataclass(frozen=True)
class RegimeReport:
    """Outcome of the fluvial-regime and height-cap checks."""

    passed: bool
    fluvial_margin: float   # min over nodes of (g*H - V^2) - alpha
    height_margin: float    # max over nodes of H - h_max

    def __bool__(self):
        return self.passed


def validate_regime(cfg: ChannelConfig, profile) -> RegimeReport:
    """Check g*H - V^2 > alpha and H < h_max at every node of a profile."""
    H = np.asarray(profile.H, dtype=float)
    V = np.asarray(profile.V, dtype=float)
    if np.any(H <= 0):
        return RegimeReport(False, float("-inf"), float(np.max(H - cfg.h_max)))
    fluvial = float(np.min(cfg.g * H - V**2) - cfg.alpha)
    height = float(np.max(H - cfg.h_max))
    return RegimeReport(fluvial > 0.0 and height < 0.0, fluvial, height)
