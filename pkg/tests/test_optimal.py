import math

import numpy as np
import pytest

from fluxbound.errors import ParameterError
from fluxbound.fields import Domain, Grid
from fluxbound.flows import cellular_pair, sinusoidal_source
from fluxbound.neumann import NeumannSpectralPlan, perp_gradient
from fluxbound.optimal import (StreamBasis, _Problem, limit_study, optimize_flow,
                               pure_advection_residual, rescaled_limit_point, state_from_flow)
from fluxbound.transport import solve_steady

G = Grid(Domain.periodic_box(), 16, 16)
PLAN = NeumannSpectralPlan(G)
F = sinusoidal_source(1.0, G)


def test_basis_adjoint_and_energy(rng):
    b = StreamBasis(G)
    a = rng.standard_normal(G.shape)
    gx, gy = rng.standard_normal(G.shape), rng.standard_normal(G.shape)
    ux, uy = b.velocity(a)
    assert np.sum(ux * gx + uy * gy) == pytest.approx(np.sum(a * b.adjoint(gx, gy)), rel=1e-12)
    assert b.energy(a) == pytest.approx(float(np.mean(ux ** 2 + uy ** 2)), rel=1e-12)


def test_basis_velocity_matches_perp_gradient():
    cp = cellular_pair(1.0)
    b = StreamBasis(G)
    psi = cp.psi(*G.mesh())
    ux, uy = b.velocity(b.from_psi(psi))
    ref = perp_gradient(cp.psi_field(G), PLAN)
    np.testing.assert_allclose(ux, ref.x.values, atol=1e-12)
    np.testing.assert_allclose(uy, ref.y.values, atol=1e-12)


def test_gradient_matches_finite_differences(rng):
    prob = _Problem(F, PLAN)
    a = rng.standard_normal(G.shape) * 0.3
    adv = prob.advection(a)[1]
    eta = prob.eta_update(adv)
    r = prob.evaluate(adv, eta)[2]
    g = prob.gradient(a, eta, r)
    d = rng.standard_normal(G.shape)
    h = 1e-6

    def obj(x):
        j1, j2, _ = prob.evaluate(prob.advection(x)[1], eta)
        return j1 + j2

    fd = (obj(a + h * d) - obj(a - h * d)) / (2 * h)
    assert float(np.sum(g * d)) == pytest.approx(fd, rel=1e-5)


def test_objective_bounds_solver_dissipation():
    for pe in (1.0, 10.0):
        st = state_from_flow(F, cellular_pair(1.0).psi(*G.mesh()), pe, PLAN)
        d = solve_steady(st.u, F, PLAN, dealias=False).dissipation
        # at the exact eta-minimiser the functional equals the dissipation
        assert st.objective == pytest.approx(d, rel=1e-8)
        assert st.constraint_activity == pytest.approx(1.0)


def test_no_flow_value():
    st = optimize_flow(F, 0.0, plan=PLAN)
    assert st.objective == pytest.approx(1 / 16, rel=1e-12)
    assert np.all(st.eta.values == 0)
    assert optimize_flow(F * 0.0, 5.0, plan=PLAN, max_iter=5).objective == 0.0


def test_optimizer_improves_on_cellular_start():
    init = state_from_flow(F, cellular_pair(1.0).psi(*G.mesh()), 10.0, PLAN, label="cellular")
    st = optimize_flow(F, 10.0, init=init, plan=PLAN, max_iter=30)
    assert st.objective <= init.objective
    assert st.norm <= 10.0 * (1 + 1e-12)
    assert solve_steady(st.u, F, PLAN, dealias=False).dissipation <= st.objective * (1 + 1e-8)
    with pytest.raises(ParameterError):
        optimize_flow(F, -1.0, plan=PLAN)


def test_cellular_pair_solves_pure_advection():
    cp = cellular_pair(1.0)
    g = Grid(Domain.periodic_box(), 32, 32)
    r = pure_advection_residual(cp.velocity_field(g), cp.eta_field(g), sinusoidal_source(1.0, g))
    assert r < 1e-12
    # (s u0, T0 / s) is another solution
    r2 = pure_advection_residual(cp.velocity_field(g) * math.sqrt(2),
                                 cp.eta_field(g) / math.sqrt(2), sinusoidal_source(1.0, g))
    assert r2 < 1e-12


def test_rescaled_limit_point():
    st = state_from_flow(F, cellular_pair(1.0).psi(*G.mesh()), 20.0, PLAN)
    u0, T0, r = rescaled_limit_point(st, f=F, plan=PLAN)
    assert math.sqrt(u0.norm_sq_average()) == pytest.approx(1.0)
    assert r == pytest.approx(pure_advection_residual(u0, T0, F, PLAN))
    with pytest.raises(ParameterError):
        rescaled_limit_point(st)


def test_limit_study_ladder_checks():
    with pytest.raises(ParameterError):
        limit_study(F, [1, 2, 3], plan=PLAN)
    with pytest.raises(ParameterError):
        limit_study(F, [1, 3, 2, 4], plan=PLAN)


def test_short_limit_study():
    cp = cellular_pair(1.0)
    init = state_from_flow(F, cp.psi(*G.mesh()), 2.0, PLAN, label="cellular")
    st = limit_study(F, [2, 4, 8, 16], reference_pair=(cp.velocity_field(G), cp.eta_field(G)),
                     init=init, plan=PLAN, max_iter=15)
    assert st.reference_value == pytest.approx(0.25, rel=1e-10)
    assert st.m_nonincreasing()
    assert st.below_reference()
    assert len(st.rows()) == 4
