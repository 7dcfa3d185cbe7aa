import math

import numpy as np
import pytest

from fluxbound.errors import ParameterError
from fluxbound.fields import Domain, Grid
from fluxbound.flows import (EPS_WALL, cellular_pair, concentrated_source, log_test_function,
                             log_test_integrals, no_flow_dissipation_cellular, pinching_energy_integrals,
                             pinching_pair, sinusoidal_source)
from fluxbound.neumann import NeumannSpectralPlan, divergence_defect, gradient, hminus1_seminorm_sq


@pytest.mark.parametrize("ell", [1.0, 0.5, 0.25])
def test_cellular_identities(ell):
    g = Grid(Domain.periodic_box(), 64, 64)
    cp = cellular_pair(ell)
    assert cp.advection_defect(g) <= 1e-12
    u = cp.velocity_field(g)
    gr = gradient(cp.eta_field(g))
    prod = u.norm_sq_average() * gr.norm_sq_average()
    assert prod == pytest.approx(0.25, rel=1e-10)
    assert divergence_defect(u) < 1e-12
    np.testing.assert_allclose(cp.source_field(g).values, sinusoidal_source(ell, g).values,
                               atol=1e-14)


def test_velocity_normalisation():
    g = Grid(Domain.periodic_box(), 32, 32)
    u = cellular_pair(1.0).velocity_field(g, pe=7.0)
    assert math.sqrt(u.norm_sq_average()) == pytest.approx(7.0, rel=1e-13)


def test_no_flow_closed_form():
    g = Grid(Domain.periodic_box(), 64, 64)
    for ell in (1.0, 0.5):
        assert hminus1_seminorm_sq(sinusoidal_source(ell, g)) == pytest.approx(
            no_flow_dissipation_cellular(ell), rel=1e-12)


def test_resolution_flag():
    cp = cellular_pair(0.25)
    assert cp.resolution_ok(Grid(Domain.periodic_box(), 256, 256))
    assert not cp.resolution_ok(Grid(Domain.periodic_box(), 64, 64))


def test_concentrated_source_masses():
    g = Grid(Domain.symmetric_box(), 128, 128)
    src = concentrated_source(1 / 32)
    plus = src.plus_field(g)
    assert float(plus.values.sum()) * g.hx * g.hy == pytest.approx(1.0, rel=1e-10)
    f = src.field(g)
    assert abs(f.average()) < 1e-15
    # reflection y -> -y flips the sign
    np.testing.assert_allclose(f.values[:, ::-1], -f.values, atol=1e-12)
    np.testing.assert_allclose(src.reflected().field(g).values, -f.values, atol=1e-12)


def test_eps_limits():
    with pytest.raises(ParameterError):
        concentrated_source(0.06)
    with pytest.raises(ParameterError):
        pinching_pair(EPS_WALL * 1.01)
    pinching_pair(EPS_WALL * 0.99)


def test_pinching_pair_transports_source():
    eps = 1 / 32
    g = Grid(Domain.symmetric_box(), 256, 256)
    fl = pinching_pair(eps)
    assert fl.advection_defect(g) < 1e-8
    ux, uy = fl.velocity(*g.mesh())
    # no penetration at the walls
    assert np.max(np.abs(ux[[0, -1], :])) < 1e-12 or np.max(np.abs(fl.velocity(
        np.array([-1.0, 1.0]), np.array([0.0, 0.0]))[0])) < 1e-12


def test_pinching_energy_quadrature_matches_grid_sum():
    eps = 1 / 32
    fl = pinching_pair(eps)
    ints = pinching_energy_integrals(fl)
    g = Grid(Domain.symmetric_box(), 1024, 1024)
    ux, uy = fl.velocity(*g.mesh())
    u_sq = float(np.sum(ux ** 2 + uy ** 2)) * g.hx * g.hy
    ex, ey = fl.extras["grad_eta"](*g.mesh())
    e_sq = float(np.sum(ex ** 2 + ey ** 2)) * g.hx * g.hy
    assert u_sq == pytest.approx(ints["u_sq"], rel=2e-2)
    assert e_sq == pytest.approx(ints["grad_eta_sq"], rel=2e-2)
    assert ints["u_sq_mean"] == pytest.approx(ints["u_sq"] / 4)


def test_log_test_function_integrals():
    eps = 1 / 32
    g = Grid(Domain.symmetric_box(), 512, 512)
    xi = log_test_function(eps, g)
    f = concentrated_source(eps).field(g)
    ref = log_test_integrals(eps)
    xf = float(np.sum(xi.values * f.values)) * g.hx * g.hy
    assert xf == pytest.approx(ref["xi_f"], rel=1e-2)
    gr = gradient(xi, NeumannSpectralPlan(g))
    # the spectral gradient of a kinked profile converges slowly
    gsq = gr.norm_sq_average() * 4.0
    assert gsq == pytest.approx(ref["grad_sq"], rel=5e-2)
