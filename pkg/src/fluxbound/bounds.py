"""Lower and upper variational bounds on the mean dissipation ``<|grad T|^2>``.

For steady test functions ``xi`` and ``eta``::

    2<f xi> - <|grad xi|^2> - <|grad inv_lap(u.grad xi)|^2>
        <= <|grad T|^2> <=
    <|grad eta|^2> + <|grad inv_lap(u.grad eta - f)|^2>

and for a steady flow both sides are attained by ``xi = (T + T_adj)/2`` and
``eta = (T - T_adj)/2`` where ``T_adj`` solves the problem with the flow
reversed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np

from .errors import ConsistencyError, DegenerateTestFunction, ParameterError
from .fields import ScalarField, VectorField
from .neumann import AdvectionOperator, NeumannSpectralPlan, _check_mean_free
from .transport import (TransportSolution, UnsteadyTrace, check_incompressible,
                        solve_adjoint, solve_steady)

SANDWICH_SLACK = 1e-8


def _prepare(test, u, f, plan):
    if plan is None:
        plan = NeumannSpectralPlan(f.grid)
    plan.check(test)
    plan.check(f)
    plan.check(u.x)
    _check_mean_free(f)
    check_incompressible(u, plan)
    return plan


def _grad_sq(plan, a):
    gx, gy = plan.grad_arrays(a)
    return float(np.mean(gx ** 2 + gy ** 2))


def advective_penalty(xi: ScalarField, u: VectorField, plan: NeumannSpectralPlan,
                      dealias: bool = False) -> float:
    """``<|grad inv_lap (u . grad xi)|^2>``."""
    a = AdvectionOperator(plan, u, dealias=dealias)(np.asarray(xi.values))
    return max(plan.hminus1_sq_arrays(a - a.mean()), 0.0)


def lower_bound_steady(xi: ScalarField, u: VectorField, f: ScalarField,
                       plan: NeumannSpectralPlan | None = None, dealias: bool = False) -> float:
    """``2<f xi> - <|grad xi|^2> - <|grad inv_lap(u . grad xi)|^2>``."""
    plan = _prepare(xi, u, f, plan)
    xv = np.asarray(xi.values)
    return (2.0 * float(np.mean(f.values * xv)) - _grad_sq(plan, xv)
            - advective_penalty(xi, u, plan, dealias))


def upper_bound_steady(eta: ScalarField, u: VectorField, f: ScalarField,
                       plan: NeumannSpectralPlan | None = None, dealias: bool = False) -> float:
    """``<|grad eta|^2> + <|grad inv_lap(u . grad eta - f)|^2>``."""
    plan = _prepare(eta, u, f, plan)
    ev = np.asarray(eta.values)
    r = AdvectionOperator(plan, u, dealias=dealias)(ev) - np.asarray(f.values)
    return _grad_sq(plan, ev) + max(plan.hminus1_sq_arrays(r - r.mean()), 0.0)


def quotient_lower_bound(xi: ScalarField, u: VectorField, f: ScalarField,
                         plan: NeumannSpectralPlan | None = None, dealias: bool = False) -> float:
    """``<f xi>^2 / (<|grad xi|^2> + <|grad inv_lap(u . grad xi)|^2>)``.

    This is the supremum of :func:`lower_bound_steady` over rescalings
    ``lambda xi``, attained at ``lambda = <f xi> / denominator``.
    """
    plan = _prepare(xi, u, f, plan)
    xv = np.asarray(xi.values)
    den = _grad_sq(plan, xv) + advective_penalty(xi, u, plan, dealias)
    scale = float(np.max(np.abs(xv))) if xv.size else 0.0
    if not den > 1e-28 * max(scale * scale, 1.0):
        raise DegenerateTestFunction("test function is (numerically) constant")
    num = float(np.mean(f.values * xv))
    return num * num / den


def optimal_scaling(xi, u, f, plan=None, dealias=False) -> float:
    """The maximising ``lambda`` in ``lower_bound_steady(lambda xi)``."""
    plan = _prepare(xi, u, f, plan)
    xv = np.asarray(xi.values)
    den = _grad_sq(plan, xv) + advective_penalty(xi, u, plan, dealias)
    if not den > 0:
        raise DegenerateTestFunction("test function is (numerically) constant")
    return float(np.mean(f.values * xv)) / den


def symmetrize(direct: TransportSolution, adjoint: TransportSolution):
    """Optimal test functions ``((T + T_adj)/2, (T - T_adj)/2)``."""
    if direct.T.grid != adjoint.T.grid:
        raise ConsistencyError("direct and adjoint solutions live on different grids")
    fd = np.asarray(direct.f.values)
    fa = np.asarray(adjoint.f.values)
    fs = max(float(np.max(np.abs(fd))), np.finfo(float).tiny)
    if float(np.max(np.abs(fd - fa))) > 1e-12 * fs:
        raise ConsistencyError("direct and adjoint solves use different sources")
    ud = direct.u
    ua = adjoint.u
    us = max(ud.max_abs(), np.finfo(float).tiny)
    dev = max(float(np.max(np.abs(ud.x.values - ua.x.values))),
              float(np.max(np.abs(ud.y.values - ua.y.values))))
    if dev > 1e-12 * us:
        raise ConsistencyError("direct and adjoint solves use different velocities")
    if direct.adjoint or not adjoint.adjoint:
        raise ConsistencyError("expected a direct solution and an adjoint solution")
    T = np.asarray(direct.T.values)
    Ta = np.asarray(adjoint.T.values)
    g = direct.T.grid
    return (ScalarField(g, 0.5 * (T + Ta), mean_free=True),
            ScalarField(g, 0.5 * (T - Ta), mean_free=True))


@dataclass
class BoundCertificate:
    """Lower/upper bound pair bracketing a computed dissipation."""

    lower: float
    upper: float
    dissipation: float
    xi: ScalarField
    eta: ScalarField
    diagnostics: dict = field(default_factory=dict)

    @property
    def gap_lower(self) -> float:
        return self.dissipation - self.lower

    @property
    def gap_upper(self) -> float:
        return self.upper - self.dissipation

    @property
    def relative_gaps(self):
        d = abs(self.dissipation) if self.dissipation != 0 else 1.0
        return self.gap_lower / d, self.gap_upper / d

    def sandwich_holds(self, slack: float = SANDWICH_SLACK) -> bool:
        s = slack * abs(self.dissipation)
        return self.gap_lower >= -s and self.gap_upper >= -s

    def as_dict(self) -> dict:
        out = {"lower": self.lower, "upper": self.upper, "dissipation": self.dissipation,
               "gap_lower": self.gap_lower, "gap_upper": self.gap_upper}
        out.update(self.diagnostics)
        return out


def certify_sharpness(u: VectorField, f: ScalarField, plan: NeumannSpectralPlan | None = None,
                      dealias_solver: bool = True, dealias_bounds: bool = False,
                      **solver_kw) -> BoundCertificate:
    """Solve the direct and adjoint problems and evaluate both bounds at the optimum."""
    if plan is None:
        plan = NeumannSpectralPlan(f.grid)
    sol = solve_steady(u, f, plan, dealias=dealias_solver, **solver_kw)
    adj = solve_adjoint(u, f, plan, dealias=dealias_solver, **solver_kw)
    xi, eta = symmetrize(sol, adj)
    lo = lower_bound_steady(xi, u, f, plan, dealias=dealias_bounds)
    up = upper_bound_steady(eta, u, f, plan, dealias=dealias_bounds)
    xv = np.asarray(xi.values)
    ev = np.asarray(eta.values)
    gxx, gxy = plan.grad_arrays(xv)
    gex, gey = plan.grad_arrays(ev)
    adv = AdvectionOperator(plan, u, dealias=dealias_solver)
    fv = np.asarray(f.values)
    r1 = adv(ev) - fv - plan.lap_arrays(xv)
    r2 = adv(xv) - plan.lap_arrays(ev)
    fnorm = math.sqrt(max(plan.hminus1_sq_arrays(fv), 1e-300))
    diag = {
        "orthogonality": float(np.mean(gxx * gex + gxy * gey)),
        "energy_split": float(np.mean(gxx ** 2 + gxy ** 2) + np.mean(gex ** 2 + gey ** 2)),
        "el_residual_1": math.sqrt(max(plan.hminus1_sq_arrays(r1 - r1.mean()), 0.0)) / fnorm,
        "el_residual_2": math.sqrt(max(plan.hminus1_sq_arrays(r2 - r2.mean()), 0.0)) / fnorm,
        "solver_residual": max(sol.residual, adj.residual),
        "iterations": sol.iterations + adj.iterations,
        "production_residual": max(sol.production_residual, adj.production_residual),
        "adjoint_dissipation": adj.dissipation,
    }
    return BoundCertificate(lo, up, sol.dissipation, xi, eta, diag)


def energy_lower_bound(xi: ScalarField, f: ScalarField, pe_sq: float, c_clms: float = 1.0,
                       bmo: float | None = None, plan: NeumannSpectralPlan | None = None) -> float:
    """``<xi f>^2 / (<|grad xi|^2> + C |xi|_BMO^2 Pe^2)``.

    Valid for every flow with ``<|u|^2> <= Pe^2``; ``c_clms`` is the
    (unknown) constant of the div-curl estimate and is left to the caller.
    """
    if pe_sq < 0 or not (c_clms > 0):
        raise ParameterError("need pe_sq >= 0 and c_clms > 0")
    if plan is None:
        plan = NeumannSpectralPlan(f.grid)
    plan.check(xi)
    plan.check(f)
    if bmo is None:
        from .norms import bmo_norm
        bmo = bmo_norm(xi)
    xv = np.asarray(xi.values)
    den = _grad_sq(plan, xv) + c_clms * bmo * bmo * pe_sq
    if not den > 0:
        raise DegenerateTestFunction("test function is constant")
    num = float(np.mean(xv * f.values))
    return num * num / den


@dataclass
class UnsteadyBoundReport:
    """Finite-horizon sandwich with its boundary terms.

    ``lower - lower_boundary <= dissipation <= upper + upper_boundary`` holds
    exactly for the time-continuous problem; the boundary terms are of order
    ``1/tau``.
    """

    tau: float
    lower: float
    upper: float
    dissipation: float
    lower_boundary: float
    upper_boundary: float
    energy_identity_residual: float
    growth_diagnostic: float

    @property
    def slack(self) -> float:
        """Total size of the boundary terms."""
        return abs(self.lower_boundary) + abs(self.upper_boundary)

    @property
    def lower_margin(self) -> float:
        return self.dissipation - (self.lower - self.lower_boundary)

    @property
    def upper_margin(self) -> float:
        return (self.upper + self.upper_boundary) - self.dissipation

    def holds(self, rtol: float = SANDWICH_SLACK) -> bool:
        s = rtol * abs(self.dissipation)
        return self.lower_margin >= -s and self.upper_margin >= -s

    def as_dict(self) -> dict:
        return {"tau": self.tau, "lower": self.lower, "upper": self.upper,
                "dissipation": self.dissipation, "lower_boundary": self.lower_boundary,
                "upper_boundary": self.upper_boundary, "slack": self.slack,
                "lower_margin": self.lower_margin, "upper_margin": self.upper_margin,
                "energy_identity_residual": self.energy_identity_residual,
                "growth_diagnostic": self.growth_diagnostic, "holds": self.holds()}


def unsteady_bound_check(xi: ScalarField, eta: ScalarField, trace: UnsteadyTrace,
                         tau: float | None = None,
                         plan: NeumannSpectralPlan | None = None) -> UnsteadyBoundReport:
    """Evaluate the finite-horizon bounds from a trace run with ``probes=(xi, eta)``.

    Boundary terms: ``(2/tau) <(T(tau) - T(0)) xi>`` on the lower side and
    ``(2/tau) <(T(tau) - T(0)) eta> - (1/tau) <T(tau)^2 - T(0)^2>`` on the upper side.
    """
    if trace.probes is None:
        raise ParameterError("trace was recorded without probe test functions")
    px, pe_ = trace.probes
    if not (np.array_equal(px.values, xi.values) and np.array_equal(pe_.values, eta.values)):
        raise ConsistencyError("test functions differ from the probes used for the trace")
    snap = trace.snapshot(trace.tau if tau is None else tau)
    f = trace.f
    if plan is None:
        plan = NeumannSpectralPlan(f.grid)
    xv = np.asarray(xi.values)
    ev = np.asarray(eta.values)
    fv = np.asarray(f.values)
    t = snap.tau
    lower = 2 * float(np.mean(fv * xv)) - _grad_sq(plan, xv) - snap.probe_lower
    upper = _grad_sq(plan, ev) + snap.probe_upper
    b_lo = 2.0 / t * (snap.T_dot_xi - trace.initial_dot_xi)
    b_up = (2.0 / t * (snap.T_dot_eta - trace.initial_dot_eta)
            - (snap.terminal_norm ** 2 - trace.initial_norm ** 2) / t)
    energy = snap.production - (snap.terminal_norm ** 2 - trace.initial_norm ** 2) / (2 * t)
    eres = abs(energy - snap.dissipation) / max(abs(snap.dissipation), np.finfo(float).tiny)
    return UnsteadyBoundReport(t, lower, upper, snap.dissipation, b_lo, b_up, eres,
                               snap.growth_diagnostic)
