"""Cosine-spectral calculus for zero-flux (Neumann) problems on rectangles.

Scalars are expanded in cosine series on the cell-centred grid (DCT-II),
derivatives of cosine series are sine series (DST-II) and vice versa.  With
the equal-weight nodal inner product the discrete gradient ``G`` and
divergence ``D`` satisfy ``D = -G^T`` exactly, so the discrete Laplacian
``L = D G`` is symmetric and the skew-symmetric advection operator is exactly
skew.  Velocity components follow the parity of a no-penetration field:
``u_x`` is a sine series in x (cosine in y) and ``u_y`` the reverse.
"""

from __future__ import annotations

import math
import os

import numpy as np
import scipy.fft as sfft

from .errors import GridMismatch, NotMeanFree, PreconditionError
from .fields import Domain, Grid, ScalarField, VectorField

MEAN_FREE_RTOL = 1e-10


def _workers():
    try:
        return max(1, int(os.environ.get("FLUXBOUND_THREADS", "1")))
    except ValueError:
        return 1


# parity codes per axis: "c" cosine (DCT-II nodes), "s" sine (DST-II nodes)
def _fwd(a, kinds):
    w = _workers()
    for axis, kind in enumerate(kinds):
        if kind == "c":
            a = sfft.dct(a, type=2, axis=axis, workers=w)
        else:
            a = sfft.dst(a, type=2, axis=axis, workers=w)
    return a


def _inv(c, kinds):
    w = _workers()
    for axis, kind in enumerate(kinds):
        if kind == "c":
            c = sfft.idct(c, type=2, axis=axis, workers=w)
        else:
            c = sfft.idst(c, type=2, axis=axis, workers=w)
    return c


def _take(c, axis, sl):
    idx = [slice(None)] * c.ndim
    idx[axis] = sl
    return c[tuple(idx)]


def _bshape(k, axis, ndim=2):
    shape = [1] * ndim
    shape[axis] = k.size
    return k.reshape(shape)


def _cos_to_sin(c, k, axis):
    """Coefficients of d/dx of a cosine series, as a sine series."""
    out = np.zeros_like(c)
    n = c.shape[axis]
    dst_idx = [slice(None)] * c.ndim
    dst_idx[axis] = slice(0, n - 1)
    out[tuple(dst_idx)] = -_bshape(k[1:], axis) * _take(c, axis, slice(1, n))
    return out


def _sin_to_cos(c, k, axis):
    """Coefficients of d/dx of a sine series, as a cosine series.

    The highest sine mode is invisible at the nodes after differentiation
    and is dropped.
    """
    out = np.zeros_like(c)
    n = c.shape[axis]
    dst_idx = [slice(None)] * c.ndim
    dst_idx[axis] = slice(1, n)
    out[tuple(dst_idx)] = _bshape(k[1:], axis) * _take(c, axis, slice(0, n - 1))
    return out


def _resize_coef(c, kinds, shape):
    """Zero-pad or truncate backward-normalised DCT/DST-II coefficients.

    The result reproduces the same trigonometric interpolant on a grid with
    ``shape`` nodes (up to truncation of the modes that do not fit).
    """
    out = c
    for axis, kind in enumerate(kinds):
        n = out.shape[axis]
        m = shape[axis]
        if m == n:
            continue
        k = min(n, m)
        new_shape = list(out.shape)
        new_shape[axis] = m
        tmp = np.zeros(new_shape)
        src = [slice(None)] * out.ndim
        src[axis] = slice(0, k)
        tmp[tuple(src)] = out[tuple(src)] * (m / n)
        if kind == "s":
            # the top sine mode carries half weight on its own grid
            last = [slice(None)] * out.ndim
            if m > n:
                last[axis] = n - 1
                tmp[tuple(last)] *= 0.5
            else:
                last[axis] = m - 1
                tmp[tuple(last)] *= 2.0
        out = tmp
    return out


class NeumannSpectralPlan:
    """Precomputed wavenumbers and eigenvalues for one grid.

    Args:
        grid: the cell-centred grid.
        dealias: default padding choice for :meth:`advect` (3/2 rule).
    """

    def __init__(self, grid: Grid, dealias: bool = False):
        self.grid = grid
        self.dealias = dealias
        d = grid.domain
        self.kx = math.pi * np.arange(grid.nx) / d.lx
        self.ky = math.pi * np.arange(grid.ny) / d.ly
        self.eigenvalues = self.kx[:, None] ** 2 + self.ky[None, :] ** 2
        inv = np.zeros_like(self.eigenvalues)
        inv[self.eigenvalues > 0] = 1.0 / self.eigenvalues[self.eigenvalues > 0]
        self._inv_eig = inv
        self.padded_shape = (_pad_size(grid.nx), _pad_size(grid.ny))

    def __repr__(self):
        return f"NeumannSpectralPlan({self.grid.nx}x{self.grid.ny}, dealias={self.dealias})"

    def check(self, field):
        if field.grid != self.grid:
            raise GridMismatch("field grid does not match the plan grid")

    # array level operations, used in inner loops -----------------------
    def grad_arrays(self, a):
        c = _fwd(a, "cc")
        gx = _inv(_cos_to_sin(c, self.kx, 0), "sc")
        gy = _inv(_cos_to_sin(c, self.ky, 1), "cs")
        return gx, gy

    def div_arrays(self, vx, vy):
        cx = _sin_to_cos(_fwd(vx, "sc"), self.kx, 0)
        cy = _sin_to_cos(_fwd(vy, "cs"), self.ky, 1)
        return _inv(cx + cy, "cc")

    def lap_arrays(self, a):
        return _inv(-self.eigenvalues * _fwd(a, "cc"), "cc")

    def inv_lap_arrays(self, a):
        """Mean-free solution of ``L x = a`` (the mean mode of ``a`` is ignored)."""
        return _inv(-self._inv_eig * _fwd(a, "cc"), "cc")

    def apply_symbol(self, a, symbol):
        """Multiply the cosine coefficients of ``a`` by ``symbol``."""
        return _inv(symbol * _fwd(a, "cc"), "cc")

    def perp_grad_arrays(self, psi):
        s = _fwd(psi, "ss")
        ux = _inv(_sin_to_cos(s, self.ky, 1), "sc")
        uy = -_inv(_sin_to_cos(s, self.kx, 0), "cs")
        return ux, uy

    def hminus1_sq_arrays(self, a):
        """Averaged ``|grad inv_lap a|^2`` computed from coefficients."""
        c = _fwd(a, "cc")
        return float(np.mean(a * _inv(self._inv_eig * c, "cc")))


def _pad_size(n):
    return int(math.ceil(1.5 * n))


class AdvectionOperator:
    """Discrete ``theta -> u . grad theta`` for a fixed velocity.

    ``form="skew"`` uses ``(u . grad theta + div(u theta)) / 2`` which is
    exactly skew-adjoint in the nodal inner product for any velocity.
    ``form="convective"`` uses the plain pointwise product.  With
    ``dealias=True`` the products are formed on a 3/2-padded grid.
    """

    def __init__(self, plan: NeumannSpectralPlan, u: VectorField, dealias=None,
                 form: str = "skew"):
        plan.check(u.x)
        if form not in ("skew", "convective"):
            raise ValueError(f"unknown advection form {form!r}")
        self.plan = plan
        self.dealias = plan.dealias if dealias is None else bool(dealias)
        self.form = form
        self.ux = np.asarray(u.x.values)
        self.uy = np.asarray(u.y.values)
        if self.dealias:
            shp = plan.padded_shape
            self._fx = _inv(_resize_coef(_fwd(self.ux, "sc"), "sc", shp), "sc")
            self._fy = _inv(_resize_coef(_fwd(self.uy, "cs"), "cs", shp), "cs")

    def __call__(self, a):
        if self.dealias:
            return self._apply_padded(a)
        p = self.plan
        gx, gy = p.grad_arrays(a)
        conv = self.ux * gx + self.uy * gy
        if self.form == "convective":
            out = conv
        else:
            out = 0.5 * (conv + p.div_arrays(self.ux * a, self.uy * a))
        return out - out.mean()

    def _apply_padded(self, a):
        p = self.plan
        shp = p.padded_shape
        n = p.grid.shape
        c = _fwd(a, "cc")
        af = _inv(_resize_coef(c, "cc", shp), "cc")
        gxf = _inv(_resize_coef(_cos_to_sin(c, p.kx, 0), "sc", shp), "sc")
        gyf = _inv(_resize_coef(_cos_to_sin(c, p.ky, 1), "cs", shp), "cs")
        conv = _resize_coef(_fwd(self._fx * gxf + self._fy * gyf, "cc"), "cc", n)
        if self.form == "skew":
            qx = _resize_coef(_fwd(self._fx * af, "sc"), "sc", n)
            qy = _resize_coef(_fwd(self._fy * af, "cs"), "cs", n)
            div = _sin_to_cos(qx, p.kx, 0) + _sin_to_cos(qy, p.ky, 1)
            conv = 0.5 * (conv + div)
        conv[0, 0] = 0.0
        return _inv(conv, "cc")


# field level API -------------------------------------------------------

def _plan_for(field, plan):
    if plan is None:
        return NeumannSpectralPlan(field.grid)
    plan.check(field)
    return plan


def gradient(theta: ScalarField, plan: NeumannSpectralPlan | None = None) -> VectorField:
    """Spectral gradient of a cosine-series scalar; normal component vanishes."""
    plan = _plan_for(theta, plan)
    gx, gy = plan.grad_arrays(theta.values)
    return VectorField.from_arrays(theta.grid, gx, gy)


def divergence(v: VectorField, plan: NeumannSpectralPlan | None = None) -> ScalarField:
    plan = _plan_for(v.x, plan)
    return ScalarField(v.grid, plan.div_arrays(v.x.values, v.y.values))


def laplacian(theta: ScalarField, plan: NeumannSpectralPlan | None = None) -> ScalarField:
    plan = _plan_for(theta, plan)
    return ScalarField(theta.grid, plan.lap_arrays(theta.values), mean_free=True)


def boundary_values(psi: ScalarField) -> np.ndarray:
    """Cubic extrapolation of nodal values to the four edges (concatenated)."""
    v = psi.values
    w = np.array([35.0, -35.0, 21.0, -5.0]) / 16.0  # weights at h/2,3h/2,5h/2,7h/2
    left = np.tensordot(w, v[:4, :], axes=(0, 0))
    right = np.tensordot(w, v[::-1][:4, :], axes=(0, 0))
    bottom = np.tensordot(w, v[:, :4], axes=(0, 1))
    top = np.tensordot(w, v[:, ::-1][:, :4], axes=(0, 1))
    return np.concatenate([left, right, bottom, top])


def perp_gradient(psi: ScalarField, plan: NeumannSpectralPlan | None = None,
                  boundary_tol: float = 1e-2) -> VectorField:
    """Velocity ``(d psi/dy, -d psi/dx)`` from a stream function.

    ``psi`` must be constant on the boundary (checked by extrapolating the
    nodal values to the edges, relative tolerance ``boundary_tol``).  The
    constant is removed and ``psi`` is expanded in a double sine series, so
    the result is exactly discretely divergence free with zero normal
    component.
    """
    plan = _plan_for(psi, plan)
    bv = boundary_values(psi)
    scale = max(float(np.max(np.abs(psi.values))), np.finfo(float).tiny)
    c0 = float(np.mean(bv))
    dev = float(np.max(np.abs(bv - c0)))
    if dev > boundary_tol * scale:
        raise PreconditionError(
            f"stream function is not constant on the boundary "
            f"(max deviation {dev:.3e}, scale {scale:.3e})")
    ux, uy = plan.perp_grad_arrays(psi.values - c0)
    return VectorField.from_arrays(psi.grid, ux, uy)


def _check_mean_free(g: ScalarField, rtol=MEAN_FREE_RTOL):
    scale = float(np.max(np.abs(g.values)))
    avg = g.average()
    if abs(avg) > rtol * max(scale, np.finfo(float).tiny) and abs(avg) > 0.0:
        raise NotMeanFree(f"field average {avg:.3e} exceeds {rtol:g} x max|g| = {scale:.3e}")


def inv_neumann_laplacian(g: ScalarField, plan: NeumannSpectralPlan | None = None) -> ScalarField:
    """Mean-free ``w`` with ``Lap w = g`` and zero normal derivative."""
    plan = _plan_for(g, plan)
    _check_mean_free(g)
    return ScalarField(g.grid, plan.inv_lap_arrays(g.values), mean_free=True)


def hminus1_seminorm_sq(g: ScalarField, plan: NeumannSpectralPlan | None = None,
                        normalized: bool = True) -> float:
    """``|grad inv_lap g|^2`` averaged over the domain (integrated if not normalized)."""
    plan = _plan_for(g, plan)
    _check_mean_free(g)
    val = plan.hminus1_sq_arrays(g.values)
    if not normalized:
        val *= g.grid.domain.area
    return max(val, 0.0)


def advect(u: VectorField, theta: ScalarField, plan: NeumannSpectralPlan | None = None,
           dealias=None, form: str = "skew") -> ScalarField:
    """Discrete ``u . grad theta``, projected mean free."""
    plan = _plan_for(theta, plan)
    plan.check(u.x)
    op = AdvectionOperator(plan, u, dealias=dealias, form=form)
    return ScalarField(theta.grid, op(theta.values), mean_free=True)


def divergence_defect(u: VectorField, plan: NeumannSpectralPlan | None = None) -> float:
    """Relative size of the discrete divergence of ``u``.

    Returns ``|grad inv_lap div u| / |u|`` (averaged L2 norms), i.e. the
    fraction of ``u`` that is a gradient.
    """
    plan = _plan_for(u.x, plan)
    d = plan.div_arrays(u.x.values, u.y.values)
    d -= d.mean()
    num = math.sqrt(max(plan.hminus1_sq_arrays(d), 0.0))
    den = math.sqrt(u.norm_sq_average())
    return num / den if den > 0 else 0.0


def helmholtz_project(u: VectorField, plan: NeumannSpectralPlan | None = None) -> VectorField:
    """Remove the discrete gradient part of ``u``."""
    plan = _plan_for(u.x, plan)
    d = plan.div_arrays(u.x.values, u.y.values)
    phi = plan.inv_lap_arrays(d)
    gx, gy = plan.grad_arrays(phi)
    return VectorField.from_arrays(u.grid, u.x.values - gx, u.y.values - gy)


def lambda1(domain: Domain) -> float:
    """Smallest nonzero Neumann eigenvalue of ``-Lap`` on the rectangle."""
    return math.pi ** 2 / max(domain.lx, domain.ly) ** 2
