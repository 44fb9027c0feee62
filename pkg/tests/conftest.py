"""Shared fixtures: channel configs, steady bases and discrete equilibria."""

import numpy as np
import pytest

import canalpi as cp
from canalpi import pde

L_REF = 20.0
Q_REF = 2.0
HC_REF = 2.0


def sinusoidal_slope(L, amplitude=0.03, n_tab=1025):
    """Tabulated slope sampling amplitude*sin(pi x / L).

    The tabulation is dense enough that the spline's knot error sits far
    below the truncation levels probed by the grid-refinement studies.
    """
    xs = np.linspace(0.0, L, n_tab)
    return cp.SlopeSpec(variant="tabulated", x_nodes=tuple(xs),
                        values=tuple(amplitude * np.sin(np.pi * xs / L)))


@pytest.fixture(scope="session")
def cfg_homogeneous():
    return cp.ChannelConfig(g=9.81, k=0.0, L=L_REF, v_g=1.0, alpha=1.0, h_max=10.0)


@pytest.fixture(scope="session")
def cfg_friction():
    return cp.ChannelConfig(g=9.81, k=0.1, L=L_REF, v_g=1.0, alpha=1.0, h_max=10.0)


@pytest.fixture(scope="session")
def cfg_friction_slope():
    return cp.ChannelConfig(g=9.81, k=0.1, slope=sinusoidal_slope(L_REF),
                            L=L_REF, v_g=1.0, alpha=1.0, h_max=10.0)


@pytest.fixture(scope="session")
def grid401():
    return cp.Grid(n=401, L=L_REF)


@pytest.fixture(scope="session")
def grid201():
    return cp.Grid(n=201, L=L_REF)


@pytest.fixture(scope="session")
def uniform_base(cfg_homogeneous, grid401):
    return cp.solve_steady(cfg_homogeneous, Q_REF, HC_REF, grid401)


@pytest.fixture(scope="session")
def fs_base(cfg_friction_slope, grid401):
    return cp.solve_steady(cfg_friction_slope, Q_REF, HC_REF, grid401)


@pytest.fixture(scope="session")
def fs_fields(cfg_friction_slope, fs_base):
    return cp.coupling_coefficients(cfg_friction_slope, fs_base).with_phi()


@pytest.fixture(scope="session")
def fs_equilibrium(cfg_friction_slope, grid201):
    seed = cp.solve_steady(cfg_friction_slope, Q_REF, HC_REF, grid201)
    sigma = pde.default_sigma(seed, cfg_friction_slope.g)
    eq = pde.discrete_equilibrium(cfg_friction_slope, Q_REF, HC_REF, grid201, sigma, seed=seed)
    return eq, sigma


def transit_time(cfg, profile):
    return cfg.L / float(np.min(np.sqrt(cfg.g * profile.H) - profile.V))


@pytest.fixture(scope="session")
def bundle_results(tmp_path_factory):
    """Run every bundled scenario once; shared by CLI and acceptance tests."""
    from canalpi import cli

    out = tmp_path_factory.mktemp("bundles")
    results = {}
    for name in cli.bundled_scenarios():
        spec = cli.load_scenario(name)
        results[name] = cli.run_scenario(spec, str(out))
    return results, out
