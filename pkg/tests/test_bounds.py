import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fluxbound.bounds import (certify_sharpness, energy_lower_bound, lower_bound_steady,
                              optimal_scaling, quotient_lower_bound, symmetrize, upper_bound_steady)
from fluxbound.errors import ConsistencyError, DegenerateTestFunction
from fluxbound.fields import Domain, Grid
from fluxbound.flows import cellular_pair, sinusoidal_source
from fluxbound.neumann import NeumannSpectralPlan, hminus1_seminorm_sq, perp_gradient
from fluxbound.transport import solve_adjoint, solve_steady

from conftest import random_stream, smooth_random

G = Grid(Domain.periodic_box(), 24, 24)
PLAN = NeumannSpectralPlan(G)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), amp=st.floats(0.0, 30.0))
def test_bounds_bracket_dissipation(seed, amp):
    rng = np.random.default_rng(seed)
    u = perp_gradient(random_stream(G, rng), PLAN, boundary_tol=0.05)
    u = u * (amp / max(np.sqrt(u.norm_sq_average()), 1e-300))
    f = smooth_random(G, rng)
    d = solve_steady(u, f, PLAN).dissipation
    xi = smooth_random(G, rng)
    eta = smooth_random(G, rng)
    tol = 1e-8 * d
    assert lower_bound_steady(xi, u, f, PLAN) <= d + tol
    assert quotient_lower_bound(xi, u, f, PLAN) <= d + tol
    assert upper_bound_steady(eta, u, f, PLAN) >= d - tol


def test_quotient_is_best_rescaling(rng):
    u = cellular_pair(1.0).velocity_field(G, 3.0)
    f = sinusoidal_source(1.0, G)
    xi = smooth_random(G, rng)
    lam = optimal_scaling(xi, u, f, PLAN)
    q = quotient_lower_bound(xi, u, f, PLAN)
    assert lower_bound_steady(xi * lam, u, f, PLAN) == pytest.approx(q, rel=1e-10)
    assert lower_bound_steady(xi * (1.3 * lam), u, f, PLAN) < q


def test_zero_flow_bounds_are_poisson():
    f = sinusoidal_source(1.0, G)
    u = cellular_pair(1.0).velocity_field(G, 0.0)
    w = solve_steady(u, f, PLAN).T
    d = hminus1_seminorm_sq(f, PLAN)
    assert lower_bound_steady(w, u, f, PLAN) == pytest.approx(d, rel=1e-12)
    # at rest the optimal upper test function vanishes
    assert upper_bound_steady(G.zeros(True), u, f, PLAN) == pytest.approx(d, rel=1e-12)
    assert upper_bound_steady(w, u, f, PLAN) == pytest.approx(2 * d, rel=1e-12)


@pytest.mark.parametrize("pe", [1.0, 10.0, 100.0])
def test_certificate_is_sharp(pe):
    g = Grid(Domain.periodic_box(), 32, 32)
    u = cellular_pair(1.0).velocity_field(g, pe)
    cert = certify_sharpness(u, sinusoidal_source(1.0, g))
    lo, up = cert.relative_gaps
    assert abs(lo) < 1e-9 and abs(up) < 1e-9
    assert cert.sandwich_holds()
    assert abs(cert.diagnostics["orthogonality"]) < 1e-8 * cert.dissipation
    assert cert.diagnostics["energy_split"] == pytest.approx(cert.dissipation, rel=1e-8)


def test_symmetrize_checks_inputs():
    u = cellular_pair(1.0).velocity_field(G, 5.0)
    f = sinusoidal_source(1.0, G)
    d = solve_steady(u, f, PLAN)
    a = solve_adjoint(u, f, PLAN)
    with pytest.raises(ConsistencyError):
        symmetrize(a, d)
    with pytest.raises(ConsistencyError):
        symmetrize(d, solve_adjoint(u * 2.0, f, PLAN))
    with pytest.raises(ConsistencyError):
        symmetrize(d, solve_adjoint(u, f * 2.0, PLAN))
    xi, eta = symmetrize(d, a)
    np.testing.assert_allclose((xi + eta).values, d.T.values, atol=1e-14)


def test_degenerate_test_function():
    u = cellular_pair(1.0).velocity_field(G, 1.0)
    with pytest.raises(DegenerateTestFunction):
        quotient_lower_bound(G.zeros(True), u, sinusoidal_source(1.0, G), PLAN)


def test_energy_lower_bound_decreases_with_budget():
    f = sinusoidal_source(1.0, G)
    xi = f
    vals = [energy_lower_bound(xi, f, pe ** 2, plan=PLAN) for pe in (0.0, 1.0, 10.0)]
    assert vals[0] > vals[1] > vals[2] > 0
    # the zero-budget value is the quotient for the resting fluid
    u0 = cellular_pair(1.0).velocity_field(G, 0.0)
    assert vals[0] == pytest.approx(quotient_lower_bound(xi, u0, f, PLAN), rel=1e-12)
