import numpy as np
import pytest

import canalpi as cp
from canalpi.errors import DomainError, RegimeError
from conftest import HC_REF, Q_REF


def test_steady_rhs_homogeneous_is_zero(cfg_homogeneous):
    for H in (1.0, 2.0, 3.5):
        assert cp.steady_rhs(cfg_homogeneous, H, 5.0, 2.0) == 0.0


def test_steady_rhs_balanced_slope():
    Hc, Q, k = 2.0, 2.0, 0.1
    c0 = k * Q**2 / Hc**3
    cfg = cp.ChannelConfig(g=9.81, k=k, slope=cp.SlopeSpec(variant="constant", c0=c0),
                           L=10.0, v_g=1.0, alpha=1.0, h_max=10.0)
    assert cp.steady_rhs(cfg, Hc, 3.0, Q) == 0.0


def test_steady_rhs_arithmetic():
    cfg = cp.ChannelConfig(g=9.81, k=0.1, L=10.0, v_g=1.0, alpha=1.0, h_max=10.0)
    expected = -(0.1 * 4.0 / 8.0) / (9.81 - 4.0 / 8.0)
    assert cp.steady_rhs(cfg, 2.0, 1.0, 2.0) == pytest.approx(expected, rel=1e-14)


def test_steady_rhs_critical_regime_error():
    cfg = cp.ChannelConfig(g=9.81, k=0.1, L=10.0, v_g=1.0, alpha=1.0, h_max=10.0)
    H_crit = (4.0 / 9.81) ** (1.0 / 3.0)
    with pytest.raises(RegimeError):
        cp.steady_rhs(cfg, 0.9 * H_crit, 1.0, 2.0)


def test_solve_steady_uniform_exact(cfg_homogeneous, grid401):
    p = cp.solve_steady(cfg_homogeneous, 2.0, 2.0, grid401)
    assert np.all(p.H == 2.0)          # every RK4 stage derivative is exactly zero
    assert np.all(p.V == 1.0)


def test_solve_steady_balanced_slope_exact():
    Hc, Q, k = 2.0, 2.0, 0.1
    c0 = k * Q**2 / Hc**3
    cfg = cp.ChannelConfig(g=9.81, k=k, slope=cp.SlopeSpec(variant="constant", c0=c0),
                           L=10.0, v_g=1.0, alpha=1.0, h_max=10.0)
    p = cp.solve_steady(cfg, Q, Hc, cp.Grid(n=201, L=10.0))
    assert np.all(p.H == Hc)


def test_solve_steady_backwater_vs_fine_oracle(cfg_friction):
    cfg = cp.ChannelConfig(g=9.81, k=0.1, L=10.0, v_g=1.0, alpha=1.0, h_max=10.0)
    coarse = cp.solve_steady(cfg, 2.0, 2.0, cp.Grid(n=201, L=10.0))
    fine = cp.solve_steady(cfg, 2.0, 2.0, cp.Grid(n=2001, L=10.0))
    assert coarse.H[0] > 2.0                         # backwater rise
    assert abs(coarse.H[0] - fine.H[0]) < 1e-8       # 10x-finer RK4 oracle


def test_solve_steady_downstream_anchor(cfg_friction_slope, fs_base):
    assert abs(fs_base.H[-1] - HC_REF) < 1e-14


def test_solve_steady_mass_line(fs_base):
    flux = fs_base.flux
    assert np.max(np.abs(flux - Q_REF)) / Q_REF < 1e-12


def test_steady_residual_uniform(cfg_homogeneous, uniform_base):
    assert cp.steady_residual(cfg_homogeneous, uniform_base) < 1e-12


def test_steady_residual_solver_output(cfg_friction_slope, fs_base):
    assert cp.steady_residual(cfg_friction_slope, fs_base) < 1e-8


def test_steady_residual_detects_point_perturbation(cfg_friction_slope, fs_base):
    H = np.array(fs_base.H)
    H[200] += 0.01
    p = cp.Profile(grid=fs_base.grid, H=H, V=np.array(fs_base.V))
    assert cp.steady_residual(cfg_friction_slope, p) > 1e-3


def test_steady_residual_order(cfg_friction_slope):
    res = {}
    for n in (101, 201, 401):
        p = cp.solve_steady(cfg_friction_slope, Q_REF, HC_REF, cp.Grid(n=n, L=cfg_friction_slope.L))
        res[n] = cp.steady_residual(cfg_friction_slope, p)
    assert np.log2(res[101] / res[201]) >= 3.8
    assert np.log2(res[201] / res[401]) >= 3.8


def test_solve_steady_regime_error_on_supercritical():
    cfg = cp.ChannelConfig(g=9.81, k=0.0, L=10.0, v_g=1.0, alpha=1.0, h_max=10.0)
    with pytest.raises((RegimeError, DomainError)):
        cp.solve_steady(cfg, 30.0, 2.0, cp.Grid(n=101, L=10.0))


def test_quasi_static_constant_inflow(cfg_friction_slope, grid201):
    inflow = cp.InflowSignal(variant="constant", q=Q_REF)
    fam = cp.quasi_static_family(cfg_friction_slope, inflow, HC_REF, grid201, [0.0, 5.0, 50.0])
    ref = cp.solve_steady(cfg_friction_slope, Q_REF, HC_REF, grid201)
    for p in fam:
        assert np.array_equal(p.H, ref.H)
        assert p.role == "quasi_static"


def test_quasi_static_degenerate_sinusoid(cfg_friction_slope, grid201):
    flat = cp.InflowSignal(variant="sinusoid", q=Q_REF, amplitude=0.0, omega=0.01)
    constant = cp.InflowSignal(variant="constant", q=Q_REF)
    a = cp.quasi_static_family(cfg_friction_slope, flat, HC_REF, grid201, [1.0, 2.0])
    b = cp.quasi_static_family(cfg_friction_slope, constant, HC_REF, grid201, [1.0, 2.0])
    for pa, pb in zip(a, b):
        assert np.array_equal(pa.H, pb.H)


def test_quasi_static_sinusoid_residuals(cfg_friction_slope):
    inflow = cp.InflowSignal(variant="sinusoid", q=Q_REF, amplitude=0.1, omega=0.01)
    grid = cp.Grid(n=401, L=cfg_friction_slope.L)
    times = np.linspace(0.0, 500.0, 5)
    for p in cp.quasi_static_family(cfg_friction_slope, inflow, HC_REF, grid, times):
        assert cp.steady_residual(cfg_friction_slope, p) < 1e-8


def test_inflow_signal_derivatives_and_bounds():
    sig = cp.InflowSignal(variant="sinusoid", q=2.0, amplitude=0.1, omega=0.05)
    t = 3.7
    assert sig.derivative(t, 1) == pytest.approx(0.1 * 0.05 * np.cos(0.05 * t), rel=1e-12)
    assert sig.derivative(t, 2) == pytest.approx(-0.1 * 0.05**2 * np.sin(0.05 * t), rel=1e-12)
    assert sig.derivative(t, 3) == pytest.approx(-0.1 * 0.05**3 * np.cos(0.05 * t), rel=1e-12)
    assert sig.derivative_sup(1) == pytest.approx(0.1 * 0.05)
    ramp = cp.InflowSignal(variant="ramp", q=2.0, rate=0.01, t_end=10.0)
    assert ramp(5.0) == pytest.approx(2.05)
    assert ramp(20.0) == pytest.approx(2.1)
    assert ramp.derivative(5.0, 1) == pytest.approx(0.01)
    assert ramp.derivative(20.0, 1) == 0.0


def test_inflow_positivity_guard():
    sig = cp.InflowSignal(variant="sinusoid", q=0.05, amplitude=0.1, omega=0.05)
    with pytest.raises(Exception):
        sig.check_positive(1000.0)


def test_profile_csv_roundtrip(tmp_path, uniform_base):
    path = tmp_path / "p.csv"
    uniform_base.to_csv(path, params={"Q": 2.0})
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# role=steady")
    assert lines[1] == "x,H,V"
    x, H, V = lines[2].split(",")
    assert float(H) == uniform_base.H[0]
