"""Sources, velocity fields and test functions for the two model problems.

Cellular rolls on ``(0, 2 pi)^2`` and the pinching (source/sink) flow on
``(-1, 1)^2``.  Every construction comes with closed-form evaluators; gridded
snapshots are produced on demand.

Pinching geometry (upper half, ``c = 1/2 + 2 eps``): polar coordinates are
centred at ``(0, c)``.  Fluid arrives along rays in the right channel, crosses
the rectangle ``R`` (``|x| <= sqrt(3) eps``, ``|y - 1/2| <= eps``) horizontally
from right to left and leaves along rays in the left channel.  The lower half
is the mirror image with the flow reversed: ``psi`` and ``eta`` are even in
``y``, ``u_x`` is odd and ``u_y`` is even.  The small region between ``R``
and the polar centre (``y >= 1/2 + eps``) is taken to be at rest, which is
the choice that keeps ``psi`` and ``eta`` continuous across the top of ``R``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
import math
from typing import Callable

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicSpline

from .errors import ConsistencyError, DegenerateFlow, ParameterError
from .fields import Domain, Grid, ScalarField, VectorField

SQ3 = math.sqrt(3.0)
EPS_MAX = 1.0 / 20.0
# beyond this radius the pinching channels reach the side walls x = +-1
EPS_WALL = (1.0 / SQ3 - 0.5) / 2.0


def _check_ell(ell):
    if not (ell > 0):
        raise ParameterError(f"scale ell must be positive, got {ell}")
    inv = 1.0 / ell
    if abs(inv - round(inv)) > 1e-9 * max(1.0, inv):
        raise ParameterError(f"1/ell must be a positive integer, got ell={ell}")
    return round(inv)


def _check_eps(eps):
    if not (0.0 < eps < EPS_MAX):
        raise ParameterError(f"eps must lie in (0, 1/20), got {eps}")


# -------------------------------------------------------------------------
# cellular problem


def sinusoidal_source(ell: float, grid: Grid | None = None) -> ScalarField:
    """``f = cos(2y/ell)/2 - cos(2x/ell)/2`` on ``(0, 2 pi)^2``."""
    _check_ell(ell)
    if grid is None:
        grid = Grid(Domain.periodic_box(), 64, 64)
    _check_box(grid, Domain.periodic_box())
    return grid.sample(lambda x, y: 0.5 * np.cos(2 * y / ell) - 0.5 * np.cos(2 * x / ell),
                       mean_free=True)


def _check_box(grid, dom):
    d = grid.domain
    if not np.allclose([d.x_min, d.x_max, d.y_min, d.y_max],
                       [dom.x_min, dom.x_max, dom.y_min, dom.y_max], rtol=0, atol=1e-12):
        raise ParameterError(f"construction requires domain {dom}, got {d}")


def normalize_to_pe(u: VectorField, pe: float) -> VectorField:
    """Rescale ``u`` so that ``mean(|u|^2) = pe^2``."""
    e = u.norm_sq_average()
    if not e > 0:
        raise DegenerateFlow("cannot normalize a zero velocity field")
    out = u * (pe / math.sqrt(e))
    if getattr(u, "certified_solenoidal", False):
        object.__setattr__(out, "certified_solenoidal", True)
    return out


@dataclass(frozen=True)
class FlowConstruction:
    """Analytic velocity / test-function pair with its source.

    Evaluators take coordinate arrays and return arrays.  ``velocity``
    returns ``(u_x, u_y)`` for the unit construction (before any Peclet
    rescaling).
    """

    name: str
    parameter: float
    domain: Domain
    psi: Callable
    velocity: Callable
    eta: Callable
    source: Callable
    source_grid: Callable = None
    extras: dict = field(default_factory=dict)

    def velocity_field(self, grid: Grid, pe: float | None = None) -> VectorField:
        _check_box(grid, self.domain)
        X, Y = grid.mesh()
        ux, uy = self.velocity(X, Y)
        u = VectorField.from_arrays(grid, ux, uy)
        if self.name == "pinching":
            # piecewise-smooth field with tangential jumps; its divergence
            # vanishes analytically, so the solver accepts it as is
            object.__setattr__(u, "certified_solenoidal", True)
        if pe is not None:
            u = normalize_to_pe(u, pe)
        return u

    def eta_field(self, grid: Grid) -> ScalarField:
        _check_box(grid, self.domain)
        return grid.sample(self.eta, mean_free=True)

    def psi_field(self, grid: Grid) -> ScalarField:
        _check_box(grid, self.domain)
        return grid.sample(self.psi)

    def source_field(self, grid: Grid) -> ScalarField:
        _check_box(grid, self.domain)
        if self.source_grid is not None:
            return self.source_grid(grid)
        return grid.sample(self.source, mean_free=True)

    def advection_defect(self, grid: Grid) -> float:
        """``max |u . grad eta - f|`` at the nodes using analytic derivatives."""
        X, Y = grid.mesh()
        ux, uy = self.velocity(X, Y)
        ex, ey = self.extras["grad_eta"](X, Y)
        return float(np.max(np.abs(ux * ex + uy * ey - self.source(X, Y))))

    def resolution_ok(self, grid: Grid) -> bool:
        """At least 8 cells per cell width ``ell`` or per source diameter ``2 eps``."""
        h = max(grid.hx, grid.hy)
        if self.name == "cellular":
            return self.parameter / h >= 8.0 - 1e-9
        return 2.0 * self.parameter / h >= 8.0 - 1e-9


def cellular_pair(ell: float) -> FlowConstruction:
    """Cellular rolls ``psi = ell sin(x/ell) sin(y/ell)``, ``eta = -ell cos cos``.

    ``u . grad eta = f`` holds identically and ``mean|u|^2 = mean|grad eta|^2 = 1/2``.
    """
    _check_ell(ell)
    k = 1.0 / ell

    def psi(x, y):
        return ell * np.sin(k * x) * np.sin(k * y)

    def velocity(x, y):
        return np.sin(k * x) * np.cos(k * y), -np.cos(k * x) * np.sin(k * y)

    def eta(x, y):
        return -ell * np.cos(k * x) * np.cos(k * y)

    def grad_eta(x, y):
        return np.sin(k * x) * np.cos(k * y), np.cos(k * x) * np.sin(k * y)

    def source(x, y):
        return 0.5 * np.cos(2 * k * y) - 0.5 * np.cos(2 * k * x)

    return FlowConstruction("cellular", float(ell), Domain.periodic_box(), psi, velocity,
                            eta, source, extras={"grad_eta": grad_eta,
                                                 "u_sq_mean": 0.5, "grad_eta_sq_mean": 0.5})


def no_flow_dissipation_cellular(ell: float) -> float:
    """Closed form ``mean |grad inv_lap f|^2 = ell^2 / 16`` for the cellular source."""
    _check_ell(ell)
    return ell ** 2 / 16.0


# -------------------------------------------------------------------------
# concentrated sources


def bump_profile(rho):
    """Smooth bump ``exp(-1/(1 - rho^2))`` on the unit disc, zero outside."""
    rho = np.asarray(rho, dtype=float)
    inside = rho < 1.0
    out = np.zeros_like(rho)
    out[inside] = np.exp(-1.0 / (1.0 - rho[inside] ** 2))
    return out


def _gauss_nodes(m):
    t, w = np.polynomial.legendre.leggauss(m)
    return 0.5 * (t + 1.0), 0.5 * w


@lru_cache(maxsize=16)
def _profile_tables(profile: Callable):
    """Mass of a radial profile and its half-chord integrals.

    Returns ``(mass, H, dH)`` where ``H(t) = int_0^sqrt(1-t^2) p(sqrt(t^2+s^2)) ds``
    (as a spline in ``t`` on [0, 1]) and ``dH`` its derivative.
    """
    def p(r):
        return float(profile(np.array([r]))[0])

    mass = 2 * math.pi * integrate.quad(lambda r: p(r) * r, 0.0, 1.0,
                                        epsabs=1e-15, epsrel=1e-13, limit=200)[0]
    # half-chord integrals on a dense table, via Gauss-Legendre after the
    # substitution s = a sin(phi) which removes the endpoint behaviour
    ts = np.linspace(0.0, 1.0, 4097)
    nodes, weights = _gauss_nodes(96)
    H = np.zeros_like(ts)
    for i, t in enumerate(ts):
        a = math.sqrt(max(1.0 - t * t, 0.0))
        if a == 0.0:
            continue
        phi = nodes * (math.pi / 2)
        s = a * np.sin(phi)
        vals = profile(np.sqrt(t * t + s * s)) * a * np.cos(phi)
        H[i] = (math.pi / 2) * float(np.dot(weights, vals))
    spline = CubicSpline(ts, H)
    return mass, spline, spline.derivative()


@dataclass(frozen=True)
class ConcentratedSource:
    """Unit-mass bumps of radius ``eps`` at ``(0, 1/2)`` (plus) and ``(0, -1/2)`` (minus).

    ``f = f_plus - f_minus`` with ``f_plus(x, y) = f_minus(x, -y)``.
    """

    eps: float
    profile: Callable = bump_profile

    def __post_init__(self):
        _check_eps(self.eps)

    @property
    def norm_const(self) -> float:
        mass, _, _ = _profile_tables(self.profile)
        return 1.0 / (self.eps ** 2 * mass)

    @property
    def K(self) -> float:
        """``max f_plus * eps^2`` (independent of eps for a fixed profile)."""
        r = np.linspace(0, 1, 2001)
        return float(np.max(self.profile(r))) / _profile_tables(self.profile)[0]

    def plus(self, x, y):
        r = np.hypot(x, y - 0.5) / self.eps
        return self.norm_const * self.profile(r)

    def minus(self, x, y):
        return self.plus(x, -y)

    def __call__(self, x, y):
        return self.plus(x, y) - self.minus(x, y)

    def _cell_average_plus(self, grid: Grid, order: int = 12) -> np.ndarray:
        """Exact (Gauss-Legendre) cell averages of ``f_plus``."""
        out = np.zeros(grid.shape)
        x_edges = grid.domain.x_min + np.arange(grid.nx + 1) * grid.hx
        y_edges = grid.domain.y_min + np.arange(grid.ny + 1) * grid.hy
        e = self.eps
        ix = np.nonzero((x_edges[1:] > -e) & (x_edges[:-1] < e))[0]
        iy = np.nonzero((y_edges[1:] > 0.5 - e) & (y_edges[:-1] < 0.5 + e))[0]
        if ix.size == 0 or iy.size == 0:
            return out
        t, w = _gauss_nodes(order)
        xs = x_edges[ix][:, None] + grid.hx * t[None, :]
        ys = y_edges[iy][:, None] + grid.hy * t[None, :]
        vals = self.plus(xs[:, None, :, None], ys[None, :, None, :])
        avg = np.einsum("abij,i,j->ab", vals, w, w)
        out[np.ix_(ix, iy)] = avg
        return out

    def _unit_mass_plus(self, grid: Grid) -> np.ndarray:
        p = self._cell_average_plus(grid)
        # remove the quadrature error so that the discrete mass is exactly one
        return p / (float(p.sum()) * grid.hx * grid.hy)

    def plus_field(self, grid: Grid) -> ScalarField:
        _check_box(grid, Domain.symmetric_box())
        return ScalarField(grid, self._unit_mass_plus(grid))

    def field(self, grid: Grid) -> ScalarField:
        """Cell-averaged ``f`` scaled so that the discrete masses are exactly +-1."""
        _check_box(grid, Domain.symmetric_box())
        p = self._unit_mass_plus(grid)
        m = p[:, ::-1]
        return ScalarField(grid, p - m, mean_free=True)

    def reflected(self) -> "ReflectedSource":
        return ReflectedSource(self)

    def row_integral(self, x, y):
        """``int_0^x f_plus(s, y) ds`` for arrays ``x, y`` (exact up to quadrature)."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        e = self.eps
        t = np.abs(y - 0.5) / e
        a = np.sqrt(np.clip(1.0 - t * t, 0.0, None))
        _, H, _ = _profile_tables(self.profile)
        full = self.norm_const * e * np.where(t < 1.0, H(np.minimum(t, 1.0)), 0.0)
        xi = np.abs(x) / e
        out = np.where(xi >= a, full, 0.0)
        partial = (xi < a) & (t < 1.0)
        if np.any(partial):
            out[partial] = self.norm_const * e * _chord_integral(
                self.profile, t[partial], a[partial], xi[partial])
        return np.sign(x) * out

    def full_row_integral(self, y, derivative=False):
        """``int_0^inf f_plus(s, y) ds`` (or its y derivative)."""
        y = np.asarray(y, dtype=float)
        e = self.eps
        t = np.abs(y - 0.5) / e
        _, H, dH = _profile_tables(self.profile)
        inside = t < 1.0
        tc = np.minimum(t, 1.0)
        if not derivative:
            return self.norm_const * e * np.where(inside, H(tc), 0.0)
        return self.norm_const * np.sign(y - 0.5) * np.where(inside, dH(tc), 0.0)


@dataclass(frozen=True)
class ReflectedSource:
    """The source with the roles of the two bumps exchanged."""

    base: ConcentratedSource

    @property
    def eps(self):
        return self.base.eps

    def __call__(self, x, y):
        return -self.base(x, y)

    def field(self, grid):
        return -self.base.field(grid)


def concentrated_source(eps: float, profile: Callable | None = None) -> ConcentratedSource:
    """Source/sink pair of radius ``eps``; default profile is the smooth bump."""
    return ConcentratedSource(eps, bump_profile if profile is None else profile)


def log_test_function(eps: float, grid: Grid | None = None) -> ScalarField:
    """Truncated logarithms ``xi_0(|x - x_plus|) - xi_0(|x - x_minus|)``.

    ``xi_0(r) = log(1/(4 eps))`` for ``r <= eps``, ``log(1/(4 r))`` up to
    ``r = 1/4`` and zero beyond.
    """
    _check_eps(eps)
    if grid is None:
        grid = Grid(Domain.symmetric_box(), 256, 256)
    _check_box(grid, Domain.symmetric_box())
    return grid.sample(lambda x, y: log_profile(np.hypot(x, y - 0.5), eps)
                       - log_profile(np.hypot(x, y + 0.5), eps), mean_free=True)


def log_profile(r, eps):
    r = np.asarray(r, dtype=float)
    return np.where(r <= eps, math.log(1 / (4 * eps)),
                    np.where(r <= 0.25, np.log(1 / (4 * np.maximum(r, eps))), 0.0))


def log_test_integrals(eps: float) -> dict:
    """Closed forms: ``int xi f = 2 log(1/(4 eps))``, ``int |grad xi|^2 = 4 pi log(1/(4 eps))``."""
    _check_eps(eps)
    L = math.log(1 / (4 * eps))
    return {"xi_f": 2 * L, "grad_sq": 4 * math.pi * L}


# -------------------------------------------------------------------------
# pinching flow


def pinching_pair(eps: float, source: ConcentratedSource | None = None) -> FlowConstruction:
    """Channel flow carrying heat from the bump at ``(0, 1/2)`` to ``(0, -1/2)``."""
    _check_eps(eps)
    if source is None:
        source = concentrated_source(eps)
    if abs(source.eps - eps) > 1e-15 * eps:
        raise ConsistencyError(f"source radius {source.eps} differs from flow radius {eps}")
    if eps >= EPS_WALL:
        raise ParameterError(
            f"for eps >= {EPS_WALL:.4f} the channels reach the side walls and the "
            "flow would cross the boundary")
    e = eps
    c = 0.5 + 2 * e
    w = SQ3 * e  # half width of R

    def q(y):
        return (12 * e * e + (2 * y - 1 - 4 * e) ** 2) / (4 * SQ3 * e)

    def dq(y):
        return (2 * y - 1 - 4 * e) / (SQ3 * e)

    def psi2(y):
        return -math.pi / 6 - np.arctan((2 * y - 1 - 4 * e) / (2 * SQ3 * e))

    def dpsi2(y):
        s = (2 * y - 1 - 4 * e) / (2 * SQ3 * e)
        return -(1.0 / (SQ3 * e)) / (1 + s * s)

    def regions(x, y):
        """Masks for the upper-half geometry (arguments already folded to y >= 0)."""
        in_r = (np.abs(x) <= w) & (np.abs(y - 0.5) <= e)
        cap = (y > 0.5 + e) & ~in_r
        theta = np.mod(np.arctan2(y - c, x), 2 * math.pi)
        rest = ~in_r & ~cap
        right = rest & (theta > 5 * math.pi / 3) & (theta <= 11 * math.pi / 6)
        flat = rest & (theta > 4 * math.pi / 3) & (theta <= 5 * math.pi / 3)
        left = rest & (theta > 7 * math.pi / 6) & (theta <= 4 * math.pi / 3)
        return in_r, right, flat, left, theta

    def fold(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        x, y = np.broadcast_arrays(x, y)
        return x, np.abs(y), np.where(y < 0, -1.0, 1.0)

    def psi(x, y):
        x, ya, _ = fold(x, y)
        in_r, right, flat, left, th = regions(x, ya)
        out = np.zeros(x.shape)
        out[in_r] = psi2(ya[in_r])
        out[right] = 11 * math.pi / 6 - th[right]
        out[flat] = math.pi / 6
        out[left] = th[left] - 7 * math.pi / 6
        return out

    def velocity(x, y):
        x, ya, sgn = fold(x, y)
        in_r, right, flat, left, th = regions(x, ya)
        ux = np.zeros(x.shape)
        uy = np.zeros(x.shape)
        ux[in_r] = dpsi2(ya[in_r])
        # psi depends on theta only: u = psi'(theta) (x, y - c) / r^2
        for mask, slope in ((right, -1.0), (left, 1.0)):
            dx = x[mask]
            dy = ya[mask] - c
            r2 = dx * dx + dy * dy
            ux[mask] = slope * dx / r2
            uy[mask] = slope * dy / r2
        # reflection: u_x odd, u_y even in y
        return sgn * ux, uy

    def side_value(ystar):
        """``eta_2`` on the right side of R, as a function of height."""
        return -q(ystar) * source.full_row_integral(ystar)

    def side_slope(ystar):
        return (-dq(ystar) * source.full_row_integral(ystar)
                - q(ystar) * source.full_row_integral(ystar, derivative=True))

    def eta(x, y):
        x, ya, _ = fold(x, y)
        in_r, right, flat, left, th = regions(x, ya)
        out = np.zeros(x.shape)
        if np.any(in_r):
            out[in_r] = -q(ya[in_r]) * source.row_integral(x[in_r], ya[in_r])
        out[right] = side_value(c + w * np.tan(th[right]))
        out[left] = -side_value(c - w * np.tan(th[left]))
        return out

    def grad_eta(x, y):
        x, ya, sgn = fold(x, y)
        in_r, right, flat, left, th = regions(x, ya)
        gx = np.zeros(x.shape)
        gy = np.zeros(x.shape)
        if np.any(in_r):
            xr, yr = x[in_r], ya[in_r]
            gx[in_r] = -q(yr) * source.plus(xr, yr)
            gy[in_r] = _eta2_dy(source, xr, yr, q, dq)
        for mask, sign, side in ((right, 1.0, 1.0), (left, -1.0, -1.0)):
            tt = th[mask]
            ystar = c + side * w * np.tan(tt)
            # d eta / d theta, then grad = (d eta/d theta) grad(theta)
            deta = sign * side_slope(ystar) * side * w / np.cos(tt) ** 2
            dx = x[mask]
            dy = ya[mask] - c
            r2 = dx * dx + dy * dy
            gx[mask] = deta * (-dy) / r2
            gy[mask] = deta * dx / r2
        return gx, sgn * gy

    def source_fn(x, y):
        return source(x, y)

    extras = {
        "grad_eta": grad_eta, "center": c, "half_width": w, "source": source,
        "dpsi2": dpsi2, "side_value": side_value, "side_slope": side_slope,
    }
    return FlowConstruction("pinching", float(eps), Domain.symmetric_box(), psi, velocity,
                            eta, source_fn, source_grid=source.field, extras=extras)


def _eta2_dy(source, x, y, q, dq):
    """``d/dy`` of ``-q(y) int_0^x f_plus(s, y) ds`` inside R."""
    h = 1e-5 * source.eps
    F = source.row_integral(x, y)
    dF = (source.row_integral(x, y + h) - source.row_integral(x, y - h)) / (2 * h)
    return -dq(y) * F - q(y) * dF


def _chord_integral(profile, t, a, b, order=96):
    """``int_0^b p(sqrt(t^2 + s^2)) ds`` for ``0 <= b <= a = sqrt(1 - t^2)``.

    Uses ``s = a sin(phi)`` and Gauss-Legendre in ``phi``; vectorised over points.
    """
    nodes, weights = _gauss_nodes(order)
    phib = np.arcsin(np.clip(b / np.where(a > 0, a, 1.0), 0.0, 1.0))
    phi = phib[:, None] * nodes[None, :]
    s = a[:, None] * np.sin(phi)
    vals = profile(np.sqrt(t[:, None] ** 2 + s * s)) * a[:, None] * np.cos(phi)
    return phib * (vals @ weights)


def pinching_energy_integrals(flow: FlowConstruction, nphi: int = 400) -> dict:
    """``int |u|^2`` and ``int |grad eta|^2`` over the whole square by quadrature.

    Channel parts use polar coordinates (``|u|^2 = 1/r^2`` and
    ``|grad eta|^2 = eta_theta^2 / r^2`` along rays); the rectangle part uses
    tensor Gauss-Legendre quadrature split at the bump support.
    """
    if flow.name != "pinching":
        raise ParameterError("energy integrals by quadrature are only defined for pinching")
    e = flow.parameter
    c = flow.extras["center"]
    w = flow.extras["half_width"]
    dpsi2 = flow.extras["dpsi2"]
    side_slope = flow.extras["side_slope"]
    # angle below the horizontal, phi in (pi/6, pi/3)
    t, wt = _gauss_nodes(nphi)
    phi = math.pi / 6 + (math.pi / 6) * t
    wphi = (math.pi / 6) * wt
    log_ratio = np.log((c / np.sin(phi)) / (w / np.cos(phi)))
    u_channel = float(np.dot(wphi, log_ratio))  # one channel, upper half
    ystar = c - w * np.tan(phi)
    deta = side_slope(ystar) * w / np.cos(phi) ** 2
    eta_channel = float(np.dot(wphi, deta ** 2 * log_ratio))
    # rectangle: u depends on y only
    ty, wy = _gauss_nodes(200)
    yy = 0.5 - e + 2 * e * ty
    u_rect = 2 * w * float(np.dot(2 * e * wy, dpsi2(yy) ** 2))
    eta_rect = _eta_rect_integral(flow)
    u_total = 2 * (2 * u_channel + u_rect)
    eta_total = 2 * (2 * eta_channel + eta_rect)
    return {"u_sq": u_total, "grad_eta_sq": eta_total,
            "u_sq_mean": u_total / 4.0, "grad_eta_sq_mean": eta_total / 4.0}


def _eta_rect_integral(flow, m=48):
    """``int_R |grad eta_2|^2`` via composite Gauss-Legendre in x and y."""
    e = flow.parameter
    w = flow.extras["half_width"]
    grad_eta = flow.extras["grad_eta"]
    t, wt = _gauss_nodes(m)
    # y panels split where the bump support starts/ends (bump is the whole height)
    ypan = np.linspace(0.5 - e, 0.5 + e, 9)
    total = 0.0
    for x0, x1 in ((-w, -e), (-e, 0.0), (0.0, e), (e, w)):
        xs = x0 + (x1 - x0) * t
        for y0, y1 in zip(ypan[:-1], ypan[1:]):
            ys = y0 + (y1 - y0) * t
            X, Y = np.meshgrid(xs, ys, indexing="ij")
            gx, gy = grad_eta(X.ravel(), Y.ravel())
            val = (gx ** 2 + gy ** 2).reshape(X.shape)
            total += (x1 - x0) * (y1 - y0) * float(wt @ val @ wt)
    return total
