"""Rayleigh-number bounds for internally heated convection.

Nothing here integrates the momentum equation.  The bounds are algebra over
computable constants: the test-function constants ``C1, C2, C3``, the
Poincare constant for incompressible no-penetration fields, and the
potential-energy coupling ``<f phi>``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DegenerateTestFunction, NoConvergence, ParameterError
from .fields import Grid, ScalarField, VectorField
from .neumann import AdvectionOperator, NeumannSpectralPlan, _check_mean_free
from .norms import bmo_norm


# -------------------------------------------------------------------------
# Poincare constant


def _dirichlet_laplacian(n, h):
    """Minus the 3-point Dirichlet Laplacian on ``n`` interior vertices."""
    return sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1]) / h ** 2


@dataclass
class PoincareResult:
    mu: float
    quotient_min: float
    iterations: int

    @property
    def mu_sq(self) -> float:
        return self.mu ** 2


def poincare_mu(grid: Grid, tol: float = 1e-13, max_iter: int = 500,
                return_details: bool = False):
    """``mu`` with ``mean|u|^2 <= mu^2 mean|grad u|^2`` for ``u = perp grad psi``, ``psi = 0`` on the walls.

    The stream function lives on the interior cell vertices.  With ``K`` the
    finite-difference Dirichlet Laplacian, the quotient
    ``<K psi, K psi> / <K psi, psi>`` is minimised by inverse iteration on
    the pencil ``(K^2, K)``; ``mu^2`` is the reciprocal of the minimum.
    """
    nx, ny = grid.nx - 1, grid.ny - 1
    if nx < 2 or ny < 2:
        raise ParameterError("grid too small")
    Kx = _dirichlet_laplacian(nx, grid.hx)
    Ky = _dirichlet_laplacian(ny, grid.hy)
    K = (sp.kron(Kx, sp.identity(ny)) + sp.kron(sp.identity(nx), Ky)).tocsc()
    lu = spla.splu(K)
    X, Y = np.meshgrid(np.arange(1, nx + 1) / (nx + 1), np.arange(1, ny + 1) / (ny + 1),
                       indexing="ij")
    # positive start vector: not orthogonal to the ground state
    x = (X * (1 - X) * Y * (1 - Y)).ravel()
    lam_old = math.inf
    for it in range(1, max_iter + 1):
        # K^2 y = K x  <=>  K y = x
        y = lu.solve(x)
        x = y / np.linalg.norm(y)
        Kx_ = K @ x
        lam = float(Kx_ @ Kx_) / float(x @ Kx_)
        if abs(lam - lam_old) <= tol * lam:
            res = PoincareResult(1.0 / math.sqrt(lam), lam, it)
            return res if return_details else res.mu
        lam_old = lam
    raise NoConvergence(f"inverse iteration did not settle in {max_iter} steps",
                        best=1.0 / math.sqrt(lam), iterations=max_iter)


def stream_quotient(psi, grid: Grid) -> float:
    """Finite-difference ``<K psi, K psi> / <K psi, psi>`` for ``psi`` on interior vertices."""
    nx, ny = grid.nx - 1, grid.ny - 1
    psi = np.asarray(psi, dtype=float).reshape(nx, ny)
    Kx = _dirichlet_laplacian(nx, grid.hx)
    Ky = _dirichlet_laplacian(ny, grid.hy)
    K = sp.kron(Kx, sp.identity(ny)) + sp.kron(sp.identity(nx), Ky)
    v = psi.ravel()
    Kv = K @ v
    return float(Kv @ Kv) / float(v @ Kv)


def vertex_mesh(grid: Grid):
    """Coordinates of the interior cell vertices."""
    d = grid.domain
    x = d.x_min + grid.hx * np.arange(1, grid.nx)
    y = d.y_min + grid.hy * np.arange(1, grid.ny)
    return np.meshgrid(x, y, indexing="ij")


# -------------------------------------------------------------------------
# coupling and constants


class Coupling(NamedTuple):
    value: float
    regime: str
    ztol: float


def _regime(value, ztol):
    if abs(value) <= ztol:
        return "zero"
    return "positive" if value > 0 else "negative"


def potential_coupling(f: ScalarField, phi: ScalarField, ztol: float | None = None) -> Coupling:
    """``<f phi>`` and its sign class; the zero band defaults to ``1e-10 |f|_2 |phi|_2``."""
    _check_mean_free(f)
    if f.grid != phi.grid:
        raise ParameterError("f and phi must share a grid")
    fv = np.asarray(f.values)
    pv = np.asarray(phi.values)
    value = float(np.mean(fv * pv))
    if ztol is None:
        ztol = 1e-10 * math.sqrt(float(np.mean(fv * fv)) * float(np.mean(pv * pv)))
    return Coupling(value, _regime(value, ztol), ztol)


@dataclass(frozen=True)
class BoundConstants:
    """``C1 = <xi f>^2``, ``C2 = <|grad xi|^2>``, ``C3 = c_clms |xi|_BMO^2 mu^2``."""

    C1: float
    C2: float
    C3: float
    mu: float
    c_clms: float
    bmo: float
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for name in ("C1", "C2", "C3", "mu", "c_clms"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ParameterError(f"{name} must be positive and finite, got {v}")

    def enstrophy_bound(self, enstrophy: float) -> float:
        """``C1 / (C2 + C3 <|grad u|^2>)``."""
        return self.C1 / (self.C2 + self.C3 * enstrophy)


def constants_from_xi(xi: ScalarField, f: ScalarField, mu: float, c_clms: float = 1.0,
                      plan: NeumannSpectralPlan | None = None, bmo: float | None = None,
                      label: str = "") -> BoundConstants:
    if plan is None:
        plan = NeumannSpectralPlan(f.grid)
    plan.check(xi)
    plan.check(f)
    xv = np.asarray(xi.values) - xi.average()
    if not np.any(np.abs(xv) > 1e-14 * max(1.0, float(np.abs(xi.values).max()))):
        raise DegenerateTestFunction("test function is constant")
    gx, gy = plan.grad_arrays(xv)
    c2 = float(np.mean(gx ** 2 + gy ** 2))
    pair = float(np.mean(np.asarray(xi.values) * np.asarray(f.values)))
    fn = math.sqrt(float(np.mean(np.asarray(f.values) ** 2)))
    if abs(pair) <= 1e-14 * fn * math.sqrt(float(np.mean(xv * xv))):
        raise DegenerateTestFunction("<xi f> vanishes")
    if bmo is None:
        bmo = bmo_norm(xi)
    c3 = c_clms * bmo ** 2 * mu ** 2
    meta = {"xi": label, "pairing": pair, "bmo": bmo, "mu": mu, "c_clms": c_clms,
            "grid": list(f.grid.shape)}
    return BoundConstants(pair ** 2, c2, c3, mu, c_clms, bmo, meta)


# -------------------------------------------------------------------------
# Rayleigh bounds

ALPHA = {"positive": 0.0, "zero": 2.0 / 3.0, "negative": 1.0}


@dataclass
class RayleighBoundReport:
    """Lower bound on ``<|grad T|^2>`` as a function of ``Ra`` in one regime."""

    constants: BoundConstants
    coupling: float
    regime: str
    g_norm_sq: float
    ra: float
    threshold: float | None
    threshold_rule: str

    @property
    def alpha(self) -> float:
        return ALPHA[self.regime]

    def bound_value(self, ra: float | None = None) -> float:
        ra = self.ra if ra is None else ra
        c = self.constants
        if self.regime == "positive":
            return self.coupling ** 2 / self.g_norm_sq
        if self.regime == "zero":
            return (c.C1 / (2 * c.C3 * math.sqrt(self.g_norm_sq) * ra)) ** (2.0 / 3.0)
        return c.C1 / (2 * c.C2 + 2 * c.C3 * abs(self.coupling) * ra)

    @property
    def value(self) -> float:
        return self.bound_value()

    def above_threshold(self, ra: float | None = None) -> bool:
        ra = self.ra if ra is None else ra
        return self.threshold is None or ra > self.threshold

    def as_dict(self) -> dict:
        return {"ra": self.ra, "regime": self.regime, "coupling": self.coupling,
                "alpha": self.alpha, "bound": self.value, "threshold": self.threshold,
                "threshold_rule": self.threshold_rule, "above_threshold": self.above_threshold(),
                "C1": self.constants.C1, "C2": self.constants.C2, "C3": self.constants.C3,
                "c_clms": self.constants.c_clms}


def thresholds(constants: BoundConstants, coupling: float, g_norm_sq: float):
    """``(Ra0, Ra1)`` from the consistency inequalities of the two Ra-dependent cases.

    ``Ra0``: where ``C1 / (2 C2)`` meets ``C2^2 / (C3^2 Ra^2 G)``.
    ``Ra1``: smallest ``Ra`` at which ``C1 / (2 C2 + 2 C3 |c| Ra)`` drops
    below ``|c|^2 / G`` and ``Ra >= C1 G / (2 C3 |c|^3)``.
    """
    c = constants
    G = g_norm_sq
    ra0 = math.sqrt(2 * c.C2 ** 3 / (c.C1 * c.C3 ** 2 * G))
    ra1 = None
    if coupling != 0:
        a = abs(coupling)
        ra1 = max(c.C1 * G / (2 * c.C3 * a ** 3), (c.C1 * G / a ** 2 - 2 * c.C2) / (2 * c.C3 * a),
                  0.0)
    return ra0, ra1


def rayleigh_bound(constants: BoundConstants, coupling, g_norm_sq: float, ra: float,
                   ztol: float = 0.0) -> RayleighBoundReport:
    """Evaluate the regime's lower bound at ``ra``.

    ``coupling`` is ``<f phi>`` (a float or a :class:`Coupling`, whose own
    zero band is then used).
    """
    if not g_norm_sq > 0:
        raise ParameterError("need <|grad phi|^2> > 0")
    if not ra > 0:
        raise ParameterError("need Ra > 0")
    if isinstance(coupling, Coupling):
        value, regime = coupling.value, coupling.regime
    else:
        value = float(coupling)
        regime = _regime(value, ztol)
    ra0, ra1 = thresholds(constants, value, g_norm_sq)
    if regime == "positive":
        thr, rule = None, "none (valid for all Ra)"
    elif regime == "zero":
        thr, rule = ra0, "Ra0 = sqrt(2 C2^3 / (C1 C3^2 G))"
    else:
        thr, rule = ra1, ("Ra1 = max(C1 G / (2 C3 |c|^3), "
                          "(C1 G / |c|^2 - 2 C2) / (2 C3 |c|), 0)")
    return RayleighBoundReport(constants, value, regime, g_norm_sq, float(ra), thr, rule)


def loglog_slope(report: RayleighBoundReport, ra_lo: float, ra_hi: float) -> float:
    return (math.log(report.bound_value(ra_hi)) - math.log(report.bound_value(ra_lo))) / \
        (math.log(ra_hi) - math.log(ra_lo))


# -------------------------------------------------------------------------
# enstrophy budget


@dataclass
class EnstrophyReport:
    ra: float
    candidate_enstrophy: float
    bound: float
    buoyancy_flux: float
    coupling: float
    dissipation: float
    g_norm_sq: float
    enstrophy: float | None = None

    @property
    def slack(self) -> float:
        """``bound - candidate``; nonnegative by Cauchy-Schwarz."""
        return self.bound - self.candidate_enstrophy

    def as_dict(self) -> dict:
        return {"ra": self.ra, "candidate_enstrophy": self.candidate_enstrophy,
                "bound": self.bound, "slack": self.slack, "buoyancy_flux": self.buoyancy_flux,
                "coupling": self.coupling, "dissipation": self.dissipation,
                "g_norm_sq": self.g_norm_sq, "enstrophy": self.enstrophy}


def _grad_phi(phi: ScalarField, grad_phi):
    if grad_phi is not None:
        return np.asarray(grad_phi[0]), np.asarray(grad_phi[1])
    g = phi.grid
    return tuple(np.gradient(np.asarray(phi.values), g.hx, g.hy, edge_order=2))


def enstrophy_budget_check(u: VectorField, T: ScalarField, f: ScalarField, phi: ScalarField,
                           ra: float, plan: NeumannSpectralPlan | None = None,
                           grad_phi=None, dealias: bool = False) -> EnstrophyReport:
    """Evaluate ``Ra <g . grad T - f phi>`` against ``Ra <|g|^2>^1/2 <|grad T|^2>^1/2 - Ra <f phi>``.

    ``<g . grad T>`` is formed as ``-<phi Lap T>`` (exact for zero-flux
    ``T``).  For a steady ``T`` the candidate equals the buoyancy power
    ``Ra <u T . g>`` (reported as ``buoyancy_flux``), which is the enstrophy
    of a Boussinesq flow.  ``grad_phi`` defaults to second-order differences.
    """
    if plan is None:
        plan = NeumannSpectralPlan(f.grid)
    pv = np.asarray(phi.values)
    Tv = np.asarray(T.values)
    gx, gy = _grad_phi(phi, grad_phi)
    G = float(np.mean(gx ** 2 + gy ** 2))
    g_dot = -float(np.mean(pv * plan.lap_arrays(Tv)))
    fphi = float(np.mean(np.asarray(f.values) * pv))
    tx, ty = plan.grad_arrays(Tv)
    D = float(np.mean(tx ** 2 + ty ** 2))
    cand = ra * (g_dot - fphi)
    bound = ra * math.sqrt(G * D) - ra * fphi
    # <u T . g> = -<phi u . grad T> for incompressible no-penetration u
    adv = AdvectionOperator(plan, u, dealias=dealias, form="skew")
    flux = -ra * float(np.mean(pv * adv(Tv)))
    ux, uy = np.asarray(u.x.values), np.asarray(u.y.values)
    ax, ay = plan.grad_arrays(ux), plan.grad_arrays(uy)
    ens = None
    if np.all(np.isfinite(ux)):
        ens = float(np.mean(ax[0] ** 2 + ax[1] ** 2 + ay[0] ** 2 + ay[1] ** 2))
    return EnstrophyReport(ra, cand, bound, flux, fphi, D, G, ens)
