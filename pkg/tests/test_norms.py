import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fluxbound.errors import ParameterError
from fluxbound.fields import Domain, Grid, ScalarField
from fluxbound.flows import concentrated_source, sinusoidal_source
from fluxbound.norms import (MaximalPlan, bmo_norm, hardy_maximal_integral, lp_norm,
                             mollifier_mass, standard_bump)

G = Grid(Domain.symmetric_box(), 32, 32)


def test_lp_norms():
    f = G.sample(lambda x, y: np.ones_like(x) * 3.0)
    assert lp_norm(f, 1) == pytest.approx(12.0)
    assert lp_norm(f, 2) == pytest.approx(6.0)
    assert lp_norm(f, 2, normalized=True) == pytest.approx(3.0)
    assert lp_norm(f, math.inf) == 3.0
    with pytest.raises(ParameterError):
        lp_norm(f, 0.5)


def test_bmo_of_constant_is_zero():
    assert bmo_norm(G.sample(lambda x, y: 0 * x + 7.5)) == 0.0


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), c=st.floats(-1e3, 1e3), s=st.floats(-10, 10))
def test_bmo_invariances(seed, c, s):
    v = np.random.default_rng(seed).standard_normal(G.shape)
    g = ScalarField(G, v)
    b = bmo_norm(g)
    assert bmo_norm(ScalarField(G, v + c)) == pytest.approx(b, rel=1e-9, abs=1e-9)
    assert bmo_norm(ScalarField(G, s * v)) == pytest.approx(abs(s) * b, rel=1e-9, abs=1e-12)
    # mean oscillation never exceeds twice the sup norm
    assert b <= 2 * np.max(np.abs(v)) + 1e-12


def test_bmo_of_sign_function():
    g = G.sample(lambda x, y: np.sign(x))
    # the half-and-half square reaches oscillation 1
    assert bmo_norm(g) == pytest.approx(1.0)


def test_bmo_family_is_reported():
    b, fam = bmo_norm(sinusoidal_source(1.0, Grid(Domain.periodic_box(), 64, 64)),
                      return_family=True)
    assert fam[0]["cells"] == (64, 64)
    assert min(x["cells"][0] for x in fam) >= 2
    assert b == max(x["max_oscillation"] for x in fam)


def test_mollifier_mass():
    # 2 pi int_0^1 exp(-1/(1-r^2)) r dr
    ref = 0.46651239317833
    assert mollifier_mass(standard_bump) == pytest.approx(ref, rel=1e-8)


def test_maximal_integral_dominates_l1():
    g = Grid(Domain.symmetric_box(), 128, 128)
    f = concentrated_source(1 / 32).plus_field(g)
    h = hardy_maximal_integral(f)
    assert h >= lp_norm(f, 1) * (1 - 1e-12)
    assert h > 1.5


def test_maximal_integral_sees_cancellation():
    g = Grid(Domain.symmetric_box(), 128, 128)
    src = concentrated_source(1 / 32)
    fp = src.plus_field(g)
    f = src.field(g)
    # the plus part alone has a log-divergent maximal function; the pair is
    # not smaller than its L1 norm either
    assert hardy_maximal_integral(f) >= lp_norm(f, 1) * (1 - 1e-12)
    assert hardy_maximal_integral(fp) > lp_norm(fp, 1)


def test_maximal_plan_ladder():
    g = Grid(Domain.symmetric_box(), 64, 64)
    lad = MaximalPlan().ladder(g)
    assert lad[0] == pytest.approx(g.hx / 2)
    assert np.allclose(lad[1:] / lad[:-1], 2.0)
    assert lad[-1] >= g.domain.diameter > lad[-2]
    with pytest.raises(ParameterError):
        MaximalPlan(ratio=1.0).ladder(g)


def test_maximal_integral_of_zero():
    assert hardy_maximal_integral(G.zeros()) == 0.0
