import numpy as np
import pytest

import canalpi as cp
from canalpi import analysis, pde
from canalpi.errors import DomainError
from conftest import HC_REF, Q_REF, transit_time


def test_h2_norm_zero(grid201):
    assert cp.h2_norm(np.zeros(201), np.zeros(201), grid201) == 0.0


def test_h2_norm_sine_closed_form():
    L = 20.0
    grid = cp.Grid(n=401, L=L)
    dev = np.sin(np.pi * grid.x / L)
    got = cp.h2_norm(dev, np.zeros(grid.n), grid)
    w = np.pi / L
    expected = np.sqrt(L / 2 * (1 + w**2 + w**4))
    assert got == pytest.approx(expected, rel=1e-6)


def test_h2_norm_homogeneity(grid201):
    rng = np.random.default_rng(2)
    f = rng.standard_normal(201)
    g = rng.standard_normal(201)
    a = cp.h2_norm(f, g, grid201)
    b = cp.h2_norm(3.5 * f, 3.5 * g, grid201)
    assert b == pytest.approx(3.5 * a, rel=1e-13)


def test_h2_norm_triangle_inequality(grid201):
    rng = np.random.default_rng(3)
    for _ in range(20):
        f1, g1 = rng.standard_normal((2, 201))
        f2, g2 = rng.standard_normal((2, 201))
        lhs = cp.h2_norm(f1 + f2, g1 + g2, grid201)
        rhs = cp.h2_norm(f1, g1, grid201) + cp.h2_norm(f2, g2, grid201)
        assert lhs <= rhs * (1 + 1e-12)


def test_h2_norm_dominates_l2(grid201):
    rng = np.random.default_rng(4)
    f, g = rng.standard_normal((2, 201))
    assert cp.h2_norm(f, g, grid201) >= cp.l2_norm(f, g, grid201)


def test_h2_norm_needs_seven_nodes():
    grid = cp.Grid(n=5, L=1.0)
    with pytest.raises(DomainError):
        cp.h2_norm(np.zeros(5), np.zeros(5), grid)


def test_fit_decay_exact_exponential():
    t = np.linspace(0.0, 30.0, 200)
    gamma, r2 = cp.fit_decay(t, np.exp(-0.3 * t), 0.0)
    assert gamma == pytest.approx(0.3, abs=1e-9)
    assert r2 == pytest.approx(1.0, abs=1e-12)


def test_fit_decay_modulated():
    t = np.linspace(0.0, 150.0, 3000)   # >= 10 oscillation periods of sin(5t)
    series = np.exp(-0.3 * t) * (2.0 + np.sin(5.0 * t))
    gamma, r2 = cp.fit_decay(t, series, 0.0)
    assert gamma == pytest.approx(0.3, abs=0.02)


def test_fit_decay_constant():
    t = np.linspace(0.0, 10.0, 50)
    gamma, r2 = cp.fit_decay(t, np.full(50, 2.5), 0.0)
    assert gamma == pytest.approx(0.0, abs=1e-9)


def test_fit_decay_errors():
    t = np.linspace(0.0, 10.0, 50)
    with pytest.raises(DomainError):
        cp.fit_decay(t, np.exp(-t), 9.9)          # fewer than 20 samples
    series = np.exp(-t)
    series[30] = -1.0
    with pytest.raises(DomainError):
        cp.fit_decay(t, series, 0.0)


def test_fit_decay_shift_invariance():
    t = np.linspace(0.0, 40.0, 300)
    series = np.exp(-0.17 * t) * (1.5 + 0.2 * np.cos(3 * t))
    g1, _ = cp.fit_decay(t, series, 5.0)
    g2, _ = cp.fit_decay(t, 7.3 * series, 5.0)
    assert abs(g1 - g2) < 1e-12


def test_harmonic_trend_extraction():
    omega = 0.01
    t = np.linspace(0.0, 4000.0, 400)
    y = 0.7 * np.sin(omega * t + 0.4) + 3e-5 * t
    assert analysis.harmonic_trend(t, y, omega) == pytest.approx(3e-5, rel=1e-6)


@pytest.fixture(scope="module")
def decay_run(cfg_friction_slope, fs_equilibrium):
    eq, sigma = fs_equilibrium
    cfg = cfg_friction_slope
    ctrl = cp.ControllerSpec(k_p=1.0, k_I=0.2, h_c=HC_REF)
    z0 = pde.consistent_z(cfg, ctrl, eq)
    cert = cp.certify(cfg, eq, ctrl.k_p, ctrl.k_I)
    assert cert.valid
    T = transit_time(cfg, eq)
    bump = pde.height_bump(eq.grid, 2e-3, 10.0, 6.0)
    st = pde.perturbed_state(eq, dH=bump, z=z0)
    inflow = cp.InflowSignal(variant="constant", q=Q_REF)
    rec = cp.run(cfg, ctrl, st, inflow, horizon=12 * T, sample_every=0.25 * T,
                 sigma=sigma, reference=eq)
    return cfg, eq, sigma, cert, z0, rec


def test_lyapunov_value_zero_at_target(decay_run):
    cfg, eq, sigma, cert, z0, _ = decay_run
    state = cp.SimState(t=0.0, profile=eq, z=z0)
    rhs_eval = lambda p: cp.interior_rhs(cfg, p, sigma)
    va, vb, vc, v = cp.lyapunov_value(cert, state, eq, rhs_eval, z_ref=z0)
    assert va == 0.0
    assert vb < 1e-18    # residual rhs of the discrete equilibrium only
    assert vc is None


def test_lyapunov_value_pure_z(decay_run):
    cfg, eq, sigma, cert, z0, _ = decay_run
    state = cp.SimState(t=0.0, profile=eq, z=z0 + 0.25)
    rhs_eval = lambda p: cp.interior_rhs(cfg, p, sigma)
    va, vb, vc, v = cp.lyapunov_value(cert, state, eq, rhs_eval, z_ref=z0)
    assert va == pytest.approx(cert.q * 0.25**2, rel=1e-12)


def test_lyapunov_quadratic_equivalence(decay_run):
    cfg, eq, sigma, cert, z0, _ = decay_run
    c_lo, c_hi = cp.quadratic_equivalence_bounds(cert, eq)
    assert 0 < c_lo <= c_hi
    rng = np.random.default_rng(8)
    rhs_eval = lambda p: cp.interior_rhs(cfg, p, sigma)
    for _ in range(100):
        h = 1e-3 * rng.standard_normal(eq.grid.n)
        v = 1e-3 * rng.standard_normal(eq.grid.n)
        dz = 1e-3 * rng.standard_normal()
        state = cp.SimState(t=0.0, profile=cp.Profile(grid=eq.grid, H=eq.H + h, V=eq.V + v),
                            z=z0 + dz)
        va, *_ = cp.lyapunov_value(cert, state, eq, rhs_eval, z_ref=z0)
        l2sq = cp.l2_norm(h, v, eq.grid) ** 2 + dz**2
        assert c_lo * l2sq * (1 - 1e-9) <= va <= c_hi * l2sq * (1 + 1e-9)


def test_lyapunov_series_monotone_after_transient(decay_run):
    cfg, eq, sigma, cert, z0, rec = decay_run
    series = cp.lyapunov_series(rec, cert, None, lambda p: cp.interior_rhs(cfg, p, sigma),
                                z_ref=z0)
    T = transit_time(cfg, eq)
    mask = series.t >= 2 * T
    assert np.max(np.diff(series.lyap[mask])) <= 1e-9
    assert series.lyap[0] > 0
    assert np.all(series.h2 >= series.l2 - 1e-15)


def test_norm_series_csv(tmp_path, decay_run):
    cfg, eq, sigma, cert, z0, rec = decay_run
    series = cp.lyapunov_series(rec, cert, None, lambda p: cp.interior_rhs(cfg, p, sigma),
                                z_ref=z0)
    series.to_csv(tmp_path / "norms.csv")
    lines = (tmp_path / "norms.csv").read_text().splitlines()
    assert lines[0] == "t,h2,l2,z_abs,lyap"
    assert len(lines) == len(series.t) + 1


def test_iss_check_constant_inflow():
    inflow = cp.InflowSignal(variant="constant", q=2.0)
    t = np.linspace(0.0, 100.0, 50)
    rep = cp.iss_check(t, np.exp(-0.1 * t), inflow, 100.0)
    assert rep.regime == "exponential"
    assert rep.gain is None
    assert rep.bounded


def test_iss_check_window_guard():
    inflow = cp.InflowSignal(variant="sinusoid", q=2.0, amplitude=0.1, omega=0.01)
    t = np.linspace(0.0, 100.0, 50)
    with pytest.raises(DomainError):
        cp.iss_check(t, np.ones(50), inflow, 100.0)


def test_iss_check_synthetic_bounded():
    omega = 0.01
    inflow = cp.InflowSignal(variant="sinusoid", q=2.0, amplitude=0.1, omega=omega)
    period = 2 * np.pi / omega
    t = np.linspace(0.0, 7 * period, 2000)
    dev = 0.02 * (1.2 + np.sin(omega * t)) + 0.05 * np.exp(-0.05 * t)
    rep = cp.iss_check(t, dev, inflow, 7 * period)
    assert rep.regime == "iss"
    assert rep.bounded
    forcing = 0.1 * (omega + omega**3)  # |d1| + |d3| peak with |d2| in quadrature
    assert rep.gain == pytest.approx(0.044 / rep.forcing_sup, rel=1e-2)


def test_compare_iss_gains():
    a = analysis.ISSReport(regime="iss", gain=2.0, dev_sup=1.0, forcing_sup=0.5,
                           trend_fraction=0.01, bounded=True)
    b = analysis.ISSReport(regime="iss", gain=1.9, dev_sup=1.0, forcing_sup=0.5,
                           trend_fraction=0.01, bounded=True)
    out = cp.compare_iss_gains(a, b)
    assert out["within_25pct"]
    c = analysis.ISSReport(regime="exponential", gain=None, dev_sup=0.0, forcing_sup=0.0,
                           trend_fraction=0.0, bounded=True)
    with pytest.raises(DomainError):
        cp.compare_iss_gains(a, c)


def test_mass_balance_small_on_equilibrium(decay_run):
    cfg, eq, sigma, cert, z0, rec = decay_run
    assert cp.mass_balance_residual(rec) < 5e-6
