"""canalpi: PI boundary control of 1-D open-channel flow.

Steady/quasi-static profiles, Lyapunov-based gain certificates, and
closed-loop nonlinear simulations with decay and ISS diagnostics.
"""

from .channel import ChannelConfig, Grid, RegimeReport, SlopeSpec, froude_margin, slope_at, validate_regime
from .steady import InflowSignal, Profile, quasi_static_family, solve_steady, steady_residual, steady_rhs
from .riemann import RiemannFields, coupling_coefficients, eigenvalues, from_riemann, phi_weights, to_riemann
from .certifier import (BoundaryCoefficients, Certificate, GainCheck, boundary_coefficients,
                        build_weights, certify, check_boundary_and_select_q, check_gains,
                        check_interior, chi_solve, verify_chi_closed_form)
from .pde import (ControllerSpec, SimState, TrajectoryRecord, apply_boundaries,
                  consistent_z, discrete_equilibrium, height_bump, interior_rhs,
                  run, simulate_target, step)
from .analysis import (ISSReport, NormSeries, compare_iss_gains, fit_decay, h2_norm,
                       iss_check, l2_norm, lyapunov_series, lyapunov_value,
                       mass_balance_residual, quadratic_equivalence_bounds)

__version__ = "0.1.0"
