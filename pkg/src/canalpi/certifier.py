"""Stability certificate for the PI-controlled channel.

Builds the weighted-entropy certificate around a base profile: gain gate,
boundary reflection coefficients, the auxiliary function chi solving a
Riccati-type ODE in x, the weights f1 = phi1^2/(lambda1 chi) and
f2 = phi2^2 chi/lambda2, the interior and boundary positivity conditions,
the integrator weight q picked at the vertex of a concave parabola, and a
halving search for the exponential rate weight mu.
"""

import io
import json
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from . import fd
from .channel import ChannelConfig, validate_regime
from .errors import CertificateInfeasibleError, ConfigError, DomainError, RegimeError
from .riemann import RiemannFields, coupling_coefficients
from .steady import Profile

CHI_BLOWUP = 1e6
IDENTITY_TOL = 1e-8


@dataclass(frozen=True)
class GainCheck:
    """Classification of a PI gain pair against the two admissible branches."""

    branch: str            # "branch1" | "branch2" | "rejected"
    margin1_kp: float      # k_p - (-1)
    margin1_ki: float      # k_I
    margin2_kp: float      # threshold2 - k_p
    margin2_ki: float      # -k_I
    threshold2: float


@dataclass(frozen=True)
class BoundaryCoefficients:
    """Linearized boundary reflection/coupling coefficients.

    k2 is the upstream reflection, k1 the downstream reflection, k3 the
    integrator coupling. On both accepted gain branches k3 > 0.
    """

    k1: float
    k2: float
    k3: float


@dataclass(frozen=True)
class InteriorCheck:
    c3a_margin: float
    c3b_margin: float
    identity_err_f1: float
    identity_err_f2: float


@dataclass(frozen=True)
class BoundaryCheck:
    c1_margin: float
    c2a_margin: float
    c2b_margin: float
    q: float
    discriminant: float


@dataclass(frozen=True)
class Certificate:
    """Assembled certificate with per-condition margins."""

    fields: RiemannFields
    k_p: float
    k_I: float
    gain_check: GainCheck
    bc: BoundaryCoefficients
    epsilon: float
    chi: np.ndarray
    f1: np.ndarray
    f2: np.ndarray
    q: float
    mu: float
    checks: dict
    valid: bool
    diagnostic: str = ""

    def report(self):
        def clean(v):
            return v if not isinstance(v, float) or np.isfinite(v) else None

        d = {
            "k_p": self.k_p,
            "k_I": self.k_I,
            "branch": self.gain_check.branch,
            "threshold2": self.gain_check.threshold2,
            "epsilon": self.epsilon,
            "mu": clean(self.mu),
            "q": clean(self.q),
            "valid": self.valid,
            "diagnostic": self.diagnostic,
            "checks": {k: clean(float(v)) for k, v in self.checks.items()},
        }
        if self.bc is not None:
            d["k1"] = self.bc.k1
            d["k2"] = self.bc.k2
            d["k3"] = self.bc.k3
        return d

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.report(), fh, indent=2, sort_keys=True)

    def arrays_to_csv(self, path):
        buf = io.StringIO()
        buf.write("x,f1,f2,chi\n")
        if self.chi is not None:
            for x, a, b, c in zip(self.fields.grid.x, self.f1, self.f2, self.chi):
                buf.write(f"{x:.17g},{a:.17g},{b:.17g},{c:.17g}\n")
        with open(path, "w") as fh:
            fh.write(buf.getvalue())


def check_gains(cfg: ChannelConfig, k_p, k_I, base: Profile) -> GainCheck:
    """Classify (k_p, k_I): branch1 needs k_p > -1 and k_I > 0; branch2 needs
    k_p below the threshold -1 - (g H1(L) - V1(L)^2)/(v_G V1(L)) and k_I < 0."""
    HL = float(base.H[-1])
    VL = float(base.V[-1])
    if VL <= 0:
        raise DomainError("branch-2 threshold undefined: V1(L) must be positive")
    threshold2 = -1.0 - (cfg.g * HL - VL**2) / (cfg.v_g * VL)
    if k_p > -1.0 and k_I > 0.0:
        branch = "branch1"
    elif k_p < threshold2 and k_I < 0.0:
        branch = "branch2"
    else:
        branch = "rejected"
    return GainCheck(
        branch=branch,
        margin1_kp=k_p + 1.0,
        margin1_ki=k_I,
        margin2_kp=threshold2 - k_p,
        margin2_ki=-k_I,
        threshold2=threshold2,
    )


def boundary_coefficients(cfg: ChannelConfig, k_p, k_I, base: Profile) -> BoundaryCoefficients:
    """Reflection coefficients at both ends and the integrator coupling k3."""
    g = cfg.g
    c0 = np.sqrt(g * base.H[0])
    lam1_0 = float(base.V[0] + c0)
    lam2_0 = float(c0 - base.V[0])
    cL = np.sqrt(g * base.H[-1])
    lam1_L = float(base.V[-1] + cL)
    lam2_L = float(cL - base.V[-1])
    w = cfg.v_g * (1.0 + k_p)
    denom = lam2_L + w
    if abs(denom) < 1e-12 * max(1.0, lam2_L):
        raise DomainError("degenerate gate gain: v_G(1+k_p) + lambda2(L) vanishes")
    k2 = -lam2_0 / lam1_0
    k1 = -(lam1_L - w) / denom
    k3 = 2.0 * cfg.v_g * k_I * np.sqrt(g / base.H[-1]) / denom
    return BoundaryCoefficients(k1=float(k1), k2=float(k2), k3=float(k3))


def _chi_rhs_splines(fields: RiemannFields, dtH1):
    if fields.phi is None:
        raise ConfigError("fields need phi weights; call with_phi() first")
    x = fields.grid.x
    H1 = fields.base.H
    a = fields.phi * fields.gamma2 / fields.lambda1 + np.sqrt(fields.g / H1) * dtH1
    b = fields.delta1 / (fields.phi * fields.lambda2)
    return CubicSpline(x, a), CubicSpline(x, b)


def chi_solve(fields: RiemannFields, dtH1=None, epsilon=0.0) -> np.ndarray:
    """Integrate chi' = phi gamma2/lambda1 + delta1 chi^2/(phi lambda2)
    + sqrt(g/H1) dtH1 + epsilon from chi(0) = lambda2(0)/lambda1(0) + epsilon.

    RK4 over grid intervals with cubic interpolation of the coefficient
    fields between nodes. Raises CertificateInfeasibleError on blow-up.
    """
    if epsilon < 0:
        raise DomainError("epsilon must be nonnegative")
    n = fields.grid.n
    dx = fields.grid.dx
    if dtH1 is None:
        dtH1 = np.zeros(n)
    a_sp, b_sp = _chi_rhs_splines(fields, dtH1)

    def rhs(x, chi):
        return float(a_sp(x)) + float(b_sp(x)) * chi * chi + epsilon

    chi = np.empty(n)
    chi[0] = fields.lambda2[0] / fields.lambda1[0] + epsilon
    x = fields.grid.x
    for i in range(n - 1):
        xi, ci = x[i], chi[i]
        k1 = rhs(xi, ci)
        k2 = rhs(xi + 0.5 * dx, ci + 0.5 * dx * k1)
        k3 = rhs(xi + 0.5 * dx, ci + 0.5 * dx * k2)
        k4 = rhs(xi + dx, ci + dx * k3)
        chi[i + 1] = ci + (dx / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.isfinite(chi[i + 1]) or abs(chi[i + 1]) > CHI_BLOWUP:
            raise CertificateInfeasibleError(f"chi blow-up before x={x[i + 1]:.4g}")
    return chi


@dataclass(frozen=True)
class ChiClosedFormReport:
    residual: float
    min_rhs: float

    @property
    def positive(self):
        return self.min_rhs > 0.0


def verify_chi_closed_form(fields: RiemannFields, dtH1=None) -> ChiClosedFormReport:
    """Check that chi0 = lambda2 phi / lambda1 solves the chi equation.

    Differentiates chi0 with 4th-order differences and compares against the
    closed-form right-hand side; also reports the minimum of that right-hand
    side (strictly positive with friction, positive velocity and small dtH1).
    """
    if fields.phi is None:
        raise ConfigError("fields need phi weights; call with_phi() first")
    n = fields.grid.n
    if dtH1 is None:
        dtH1 = np.zeros(n)
    chi0 = fields.lambda2 * fields.phi / fields.lambda1
    dchi = fd.derivative(chi0, fields.grid.dx)
    rhs = (fields.phi * fields.gamma2 / fields.lambda1
           + fields.delta1 * chi0**2 / (fields.phi * fields.lambda2)
           + np.sqrt(fields.g / fields.base.H) * dtH1)
    return ChiClosedFormReport(residual=float(np.max(np.abs(dchi - rhs))),
                               min_rhs=float(np.min(rhs)))


def build_weights(fields: RiemannFields, chi):
    """Certificate weights f1 = phi1^2/(lambda1 chi), f2 = phi2^2 chi/lambda2."""
    if fields.phi1 is None:
        raise ConfigError("fields need phi weights; call with_phi() first")
    chi = np.asarray(chi, dtype=float)
    if np.any(chi <= 0):
        raise CertificateInfeasibleError("chi must stay positive on [0, L]")
    f1 = fields.phi1**2 / (fields.lambda1 * chi)
    f2 = fields.phi2**2 * chi / fields.lambda2
    return f1, f2


def check_interior(fields: RiemannFields, f1, f2, dtf1=None, dtf2=None,
                   chi=None, epsilon=0.0, dtH1=None) -> InteriorCheck:
    """Interior positivity margins of the weighted-entropy decay form.

    c3a: (-lambda1 f1)_x + 2 f1 gamma1 - dtf1 > 0 nodewise.
    c3b: the 2x2 determinant with the cross coupling (gamma2 f1 + delta1 f2).

    Spatial derivatives use 4th-order differences. When chi is supplied, the
    exact identities (-lambda1 f1)_x + 2 gamma1 f1 = phi1^2 chi'/chi^2 and
    (lambda2 f2)_x + 2 delta2 f2 = phi2^2 chi' are used as a cross-check,
    with chi' evaluated from the ODE right-hand side.
    """
    n = fields.grid.n
    dx = fields.grid.dx
    if dtf1 is None:
        dtf1 = np.zeros(n)
    if dtf2 is None:
        dtf2 = np.zeros(n)
    a_term = -fd.derivative(fields.lambda1 * f1, dx) + 2.0 * fields.gamma1 * f1 - dtf1
    b_term = fd.derivative(fields.lambda2 * f2, dx) + 2.0 * fields.delta2 * f2 - dtf2
    cross = fields.gamma2 * f1 + fields.delta1 * f2
    det = a_term * b_term - cross**2
    ident1 = np.nan
    ident2 = np.nan
    if chi is not None:
        if dtH1 is None:
            dtH1 = np.zeros(n)
        a_sp, b_sp = _chi_rhs_splines(fields, dtH1)
        dchi = a_sp(fields.grid.x) + b_sp(fields.grid.x) * chi**2 + epsilon
        ident1 = float(np.max(np.abs((a_term + dtf1) - fields.phi1**2 * dchi / chi**2)))
        ident2 = float(np.max(np.abs((b_term + dtf2) - fields.phi2**2 * dchi)))
    return InteriorCheck(
        c3a_margin=float(np.min(a_term)),
        c3b_margin=float(np.min(det)),
        identity_err_f1=ident1,
        identity_err_f2=ident2,
    )


def check_boundary_and_select_q(fields: RiemannFields, f1, f2,
                                bc: BoundaryCoefficients) -> BoundaryCheck:
    """Boundary margins at x=0 and x=L, and the integrator weight q.

    The condition at L in q is the concave parabola
    P(q) = -(q^2/4)(H1/g)(k1-1)^2 + q sqrt(H1/g) k3 (a - b k1) - a b k3^2
    with a = lambda1 f1(L), b = lambda2 f2(L); q is placed at the vertex.
    Its discriminant is (H1/g) k3^2 b^2 h(a/b) with h(X) = (X-k1)^2
    - X (k1-1)^2, whose roots are k1^2 and 1.
    """
    HL = float(fields.base.H[-1])
    g = fields.g
    s = np.sqrt(HL / g)
    a = float(fields.lambda1[-1] * f1[-1])
    b = float(fields.lambda2[-1] * f2[-1])
    k1, k2, k3 = bc.k1, bc.k2, bc.k3

    c1_margin = float(fields.lambda2[0] * f2[0] / (fields.lambda1[0] * f1[0]) - k2**2)
    c2a_margin = a / b - k1**2

    def P(q):
        return (-(q * q / 4.0) * (HL / g) * (k1 - 1.0)**2
                + q * s * k3 * (a - b * k1) - a * b * k3**2)

    if abs(k3) < 1e-300:
        raise CertificateInfeasibleError("k_I = 0: no positive q exists (k3 = 0)")
    if abs(k1 - 1.0) > 1e-12:
        hX = (a / b - k1)**2 - (a / b) * (k1 - 1.0)**2
        disc = (HL / g) * k3**2 * b**2 * hX
        if disc <= 0:
            raise CertificateInfeasibleError("discriminant of P(q) is nonpositive")
        q = 2.0 * np.sqrt(g / HL) * k3 * (a - b * k1) / (k1 - 1.0)**2
        if q <= 0:
            raise CertificateInfeasibleError("vertex of P(q) is not positive")
    else:
        # quadratic coefficient vanishes identically: P is linear in q
        slope = s * k3 * (a - b)
        if slope <= 0:
            raise CertificateInfeasibleError("P(q) linear with nonpositive slope")
        disc = np.inf
        q = 2.0 * a * b * k3 / (s * (a - b))
    c2b_margin = float(P(q))
    return BoundaryCheck(c1_margin=c1_margin, c2a_margin=float(c2a_margin),
                         c2b_margin=c2b_margin, q=float(q), discriminant=float(disc))


def _mu_margins(fields, f1, f2, bc, q, mu, dtf1, dtf2):
    """Margins of the mu-perturbed boundary and interior quadratic forms."""
    L = fields.grid.L
    lam_min = float(min(np.min(fields.lambda1), np.min(fields.lambda2)))
    HL = float(fields.base.H[-1])
    s = np.sqrt(HL / fields.g)
    a = float(fields.lambda1[-1] * f1[-1])
    b = float(fields.lambda2[-1] * f2[-1])
    k1, k3 = bc.k1, bc.k3
    eL = np.exp(mu * L)
    A = a / eL - b * eL * k1**2
    B = q * s * k3 - b * eL * k3**2 - mu * lam_min * q
    cross_half = b * eL * k3 * k1 - 0.5 * q * s * (k1 - 1.0)
    i1_det = A * B - cross_half**2

    dx = fields.grid.dx
    n = fields.grid.n
    a_term = -fd.derivative(fields.lambda1 * f1, dx) + 2.0 * fields.gamma1 * f1 - (dtf1 if dtf1 is not None else 0.0)
    b_term = fd.derivative(fields.lambda2 * f2, dx) + 2.0 * fields.delta2 * f2 - (dtf2 if dtf2 is not None else 0.0)
    x = fields.grid.x
    cross = fields.gamma2 * f1 * np.exp(-mu * x) + fields.delta1 * f2 * np.exp(mu * x)
    i2_det = a_term * b_term - cross**2
    return min(A, i1_det, float(np.min(i2_det)))


def certify(cfg: ChannelConfig, base: Profile, k_p, k_I,
            epsilon=None, mu=None, dtH1=None, dtf1=None, dtf2=None) -> Certificate:
    """Run the full certificate pipeline around a base profile.

    Stages: gain gate, chi integration, weight construction, interior and
    boundary margins with q selection, then a halving search shrinking mu
    (20 iterations max, seeded at 0.5/L) until the mu-perturbed forms stay
    positive definite. Any stage failure yields an invalid certificate with
    a diagnostic instead of an exception.
    """
    gains = check_gains(cfg, k_p, k_I, base)

    def invalid(diag, fields=None, bc=None, chi=None, f1=None, f2=None, checks=None):
        return Certificate(
            fields=fields, k_p=k_p, k_I=k_I, gain_check=gains, bc=bc,
            epsilon=0.0 if epsilon is None else epsilon, chi=chi,
            f1=f1, f2=f2, q=np.nan, mu=np.nan,
            checks=checks or {}, valid=False, diagnostic=diag,
        )

    if gains.branch == "rejected":
        return invalid("gains rejected: neither branch of the gain condition holds")
    if not validate_regime(cfg, base):
        return invalid("base profile fails the regime check")

    fields = coupling_coefficients(cfg, base).with_phi()
    n = fields.grid.n
    if dtH1 is None:
        dtH1 = np.zeros(n)
    eps = float(epsilon) if epsilon is not None else 1e-2 * fields.lambda2[0] / fields.lambda1[0]

    try:
        chi = chi_solve(fields, dtH1=dtH1, epsilon=eps)
        f1, f2 = build_weights(fields, chi)
        bc = boundary_coefficients(cfg, k_p, k_I, base)
        interior = check_interior(fields, f1, f2, dtf1=dtf1, dtf2=dtf2,
                                  chi=chi, epsilon=eps, dtH1=dtH1)
        boundary = check_boundary_and_select_q(fields, f1, f2, bc)
    except (CertificateInfeasibleError, RegimeError, DomainError) as exc:
        return invalid(f"certificate construction failed: {exc}", fields=fields)

    checks = {
        "c1": boundary.c1_margin,
        "c2a": boundary.c2a_margin,
        "c2b": boundary.c2b_margin,
        "c3a": interior.c3a_margin,
        "c3b": interior.c3b_margin,
    }
    ident = max(interior.identity_err_f1, interior.identity_err_f2)
    if not all(m > 0 for m in checks.values()):
        return invalid("nonpositive certificate margin", fields=fields, bc=bc,
                       chi=chi, f1=f1, f2=f2, checks=checks)
    if not np.isfinite(ident) or ident > IDENTITY_TOL:
        return invalid(f"interior identity cross-check failed ({ident:.3g})",
                       fields=fields, bc=bc, chi=chi, f1=f1, f2=f2, checks=checks)

    mu_val = float(mu) if mu is not None else 0.5 / fields.grid.L
    mu_found = None
    for _ in range(20):
        if _mu_margins(fields, f1, f2, bc, boundary.q, mu_val, dtf1, dtf2) > 0:
            mu_found = mu_val
            break
        mu_val *= 0.5
    if mu_found is None:
        return invalid("no positive mu keeps the perturbed forms definite",
                       fields=fields, bc=bc, chi=chi, f1=f1, f2=f2, checks=checks)

    checks["identity_err"] = ident
    checks["discriminant"] = boundary.discriminant
    return Certificate(
        fields=fields, k_p=k_p, k_I=k_I, gain_check=gains, bc=bc,
        epsilon=eps, chi=chi, f1=f1, f2=f2, q=boundary.q, mu=mu_found,
        checks=checks, valid=True,
    )


def target_dtH1(fields: RiemannFields):
    """Time derivative of the base height via the mass equation identity."""
    return -fd.derivative(fields.base.H * fields.base.V, fields.grid.dx)


def certify_family(cfg: ChannelConfig, snapshots, times, k_p, k_I,
                   epsilon=None, mu=None):
    """Certify along a family of target snapshots.

    The time derivatives of f1, f2 entering the interior condition are
    estimated by centered differences of the per-snapshot weights; the first
    and last snapshots use one-sided differences.
    """
    times = np.asarray(times, dtype=float)
    if len(snapshots) != len(times) or len(times) < 2:
        raise ConfigError("need matching snapshots and at least two times")
    prelim = []
    for p in snapshots:
        fields = coupling_coefficients(cfg, p).with_phi()
        dtH1 = target_dtH1(fields)
        eps = float(epsilon) if epsilon is not None else 1e-2 * fields.lambda2[0] / fields.lambda1[0]
        chi = chi_solve(fields, dtH1=dtH1, epsilon=eps)
        f1, f2 = build_weights(fields, chi)
        prelim.append((fields, dtH1, eps, chi, f1, f2))
    certs = []
    for i, p in enumerate(snapshots):
        lo = max(i - 1, 0)
        hi = min(i + 1, len(times) - 1)
        dt = times[hi] - times[lo]
        dtf1 = (prelim[hi][4] - prelim[lo][4]) / dt
        dtf2 = (prelim[hi][5] - prelim[lo][5]) / dt
        certs.append(certify(cfg, p, k_p, k_I, epsilon=prelim[i][2], mu=mu,
                             dtH1=prelim[i][1], dtf1=dtf1, dtf2=dtf2))
    return certs
