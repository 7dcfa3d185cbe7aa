"""Steady, adjoint and time-dependent advection-diffusion solvers.

The steady problem ``u . grad T = Lap T + f`` with zero-flux walls is solved
for the mean-free ``T`` by restarted GMRES on the spectral operator.  Two
preconditioners are available: the inverse Neumann Laplacian (cheap, but
iteration counts grow with the Peclet number) and a sparse LU factorisation
of a first-order upwind finite-volume version of the same operator (robust
at high Peclet number).
"""

from __future__ import annotations

from dataclasses import dataclass, field
import logging
import math
import time

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import CFLViolation, NoConvergence, NotIncompressible, ParameterError
from .fields import ScalarField, VectorField
from .neumann import (AdvectionOperator, NeumannSpectralPlan, divergence_defect,
                      _check_mean_free)

log = logging.getLogger(__name__)

DIV_TOL = 1e-8


@dataclass
class TransportSolution:
    """Result of a steady solve.

    ``residual`` is the relative H^-1 residual of the PDE,
    ``production_residual`` the relative mismatch between ``mean(f T)`` and
    ``mean(|grad T|^2)`` (they agree exactly for the continuous problem).
    """

    T: ScalarField
    u: VectorField
    f: ScalarField
    iterations: int
    residual: float
    dissipation: float
    production: float
    converged: bool
    adjoint: bool = False
    dealias: bool = True
    preconditioner: str = "fd"
    wall_time: float = 0.0

    @property
    def production_residual(self) -> float:
        d = max(abs(self.dissipation), abs(self.production), np.finfo(float).tiny)
        return abs(self.production - self.dissipation) / d

    @property
    def pe(self) -> float:
        return math.sqrt(self.u.norm_sq_average())


def check_incompressible(u: VectorField, plan: NeumannSpectralPlan, tol: float = DIV_TOL):
    """Raise :class:`NotIncompressible` if the discrete divergence is too large."""
    if getattr(u, "certified_solenoidal", False):
        return 0.0
    d = divergence_defect(u, plan)
    if d > tol:
        raise NotIncompressible(f"discrete divergence defect {d:.3e} exceeds {tol:g}")
    return d


def upwind_matrix(plan: NeumannSpectralPlan, u: VectorField) -> sp.csr_matrix:
    """Sparse first-order upwind finite-volume version of ``u . grad - Lap``.

    Zero-flux walls are imposed by mirror ghosts, so boundary differences
    vanish.  Unknowns are ordered as ``values.ravel()`` (C order).
    """
    g = plan.grid
    nx, ny = g.shape
    hx, hy = g.hx, g.hy
    idx = np.arange(nx * ny).reshape(nx, ny)
    ux = np.asarray(u.x.values)
    uy = np.asarray(u.y.values)
    rows, cols, vals = [], [], []
    diag = np.zeros((nx, ny))

    def couple(mask_sl, nb_sl, coef):
        r = idx[mask_sl].ravel()
        c = idx[nb_sl].ravel()
        rows.append(r)
        cols.append(c)
        vals.append(-coef.ravel())
        np.add.at(diag.ravel(), r, coef.ravel())

    # x neighbours
    up = np.maximum(ux, 0.0) / hx
    dn = -np.minimum(ux, 0.0) / hx
    dx2 = 1.0 / hx ** 2
    couple((slice(1, None), slice(None)), (slice(0, -1), slice(None)), up[1:, :] + dx2)
    couple((slice(0, -1), slice(None)), (slice(1, None), slice(None)), dn[:-1, :] + dx2)
    up = np.maximum(uy, 0.0) / hy
    dn = -np.minimum(uy, 0.0) / hy
    dy2 = 1.0 / hy ** 2
    couple((slice(None), slice(1, None)), (slice(None), slice(0, -1)), up[:, 1:] + dy2)
    couple((slice(None), slice(0, -1)), (slice(None), slice(1, None)), dn[:, :-1] + dy2)
    rows.append(idx.ravel())
    cols.append(idx.ravel())
    vals.append(diag.ravel())
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(nx * ny, nx * ny))
    return A


class _FDPreconditioner:
    """Pinned sparse LU of the upwind operator, applied mean free."""

    def __init__(self, plan, u):
        A = upwind_matrix(plan, u).tolil()
        A[0, :] = 0.0
        A[0, 0] = 1.0
        self.lu = spla.splu(A.tocsc(), permc_spec="COLAMD")
        self.shape = plan.grid.shape

    def __call__(self, r):
        r = np.array(r, dtype=float).ravel()
        r[0] = 0.0
        x = self.lu.solve(r)
        return x - x.mean()


class SteadyOperator:
    """``T -> A(u) T - Lap T`` on flattened mean-free arrays."""

    def __init__(self, plan: NeumannSpectralPlan, u: VectorField, dealias=True):
        self.plan = plan
        self.adv = AdvectionOperator(plan, u, dealias=dealias, form="skew")
        self.shape = plan.grid.shape
        self.nmatvec = 0

    def apply_array(self, T):
        self.nmatvec += 1
        out = self.adv(T) - self.plan.lap_arrays(T)
        return out - out.mean()

    def matvec(self, x):
        return self.apply_array(np.reshape(x, self.shape)).ravel()

    def hm1_rel_residual(self, T, f, fnorm):
        r = self.apply_array(T) - f
        r -= r.mean()
        return math.sqrt(max(self.plan.hminus1_sq_arrays(r), 0.0)) / fnorm


# bytes per unknown of the sparse LU (with COLAMD ordering) plus solver
# workspace, measured on 5-point upwind matrices between 256^2 and 1024^2
FD_BYTES_PER_UNKNOWN = 2700.0


def fd_memory_estimate(n_unknowns: int) -> float:
    """Rough peak memory (bytes) of a steady solve with the sparse LU preconditioner."""
    return FD_BYTES_PER_UNKNOWN * n_unknowns * (1.0 + 0.1 * max(0.0, math.log2(n_unknowns / 2 ** 20)))


def available_memory() -> float:
    """Available memory in bytes (``MemAvailable``), or infinity if unknown."""
    try:
        with open("/proc/meminfo") as fh:
            for line in fh:
                if line.startswith("MemAvailable:"):
                    return float(line.split()[1]) * 1024.0
    except OSError:
        pass
    return math.inf


def cell_peclet(u: VectorField, grid) -> float:
    return u.max_abs() * max(grid.hx, grid.hy)


def fd_affordable(grid) -> bool:
    return fd_memory_estimate(grid.nx * grid.ny) <= 0.9 * available_memory()


def _choose_preconditioner(name, plan, u):
    if name == "auto":
        pe_cell = cell_peclet(u, plan.grid)
        name = "fd" if (pe_cell > 0.5 and fd_affordable(plan.grid)) else "laplace"
    if name == "fd":
        return name, _FDPreconditioner(plan, u)
    if name == "laplace":
        return name, lambda r: plan.inv_lap_arrays(np.reshape(r, plan.grid.shape)).ravel()
    if name == "none":
        return name, None
    raise ParameterError(f"unknown preconditioner {name!r}")


def solve_steady(u: VectorField, f: ScalarField, plan: NeumannSpectralPlan | None = None,
                 rtol: float = 1e-10, max_iter: int = 4000, restart: int = 60,
                 preconditioner: str = "auto", dealias: bool = True,
                 x0: ScalarField | None = None, _adjoint: bool = False) -> TransportSolution:
    """Solve ``u . grad T = Lap T + f`` for mean-free ``T``.

    Args:
        u: discretely divergence-free velocity with zero normal component.
        f: mean-free source.
        rtol: relative tolerance on the H^-1 residual.
        preconditioner: ``"fd"``, ``"laplace"``, ``"none"`` or ``"auto"``.
        dealias: form advection products on a 3/2-padded grid.

    Raises:
        NotMeanFree, NotIncompressible, NoConvergence (carrying the best iterate).
    """
    if plan is None:
        plan = NeumannSpectralPlan(f.grid)
    plan.check(f)
    plan.check(u.x)
    _check_mean_free(f)
    check_incompressible(u, plan)
    t0 = time.perf_counter()
    fv = np.asarray(f.values) - f.average()
    fnorm = math.sqrt(max(plan.hminus1_sq_arrays(fv), 0.0))
    grid = f.grid
    if fnorm == 0.0:
        T = grid.zeros(mean_free=True)
        return TransportSolution(T, u, f, 0, 0.0, 0.0, 0.0, True, _adjoint, dealias, "none")
    op = SteadyOperator(plan, u, dealias=dealias)
    pname, pc = _choose_preconditioner(preconditioner, plan, u)
    N = fv.size
    A = spla.LinearOperator((N, N), matvec=op.matvec, dtype=float)
    M = spla.LinearOperator((N, N), matvec=pc, dtype=float) if pc is not None else None
    x = np.zeros(N) if x0 is None else np.asarray(x0.values, dtype=float).ravel().copy()
    b = fv.ravel()
    res = op.hm1_rel_residual(x.reshape(grid.shape), fv, fnorm)
    best = (res, x.copy())
    inner_tol = 0.1 * rtol
    its = 0
    while res > rtol and op.nmatvec < max_iter:
        counter = {"n": 0}

        def cb(_):
            counter["n"] += 1

        x, info = spla.gmres(A, b, x0=x, rtol=inner_tol, atol=0.0, restart=restart,
                             maxiter=max(1, (max_iter - op.nmatvec) // restart + 1), M=M,
                             callback=cb, callback_type="pr_norm")
        its += counter["n"]
        x -= x.mean()
        new = op.hm1_rel_residual(x.reshape(grid.shape), fv, fnorm)
        if new < best[0]:
            best = (new, x.copy())
        if new >= res * 0.999 and info != 0:
            res = new
            break
        res = new
        inner_tol *= 0.1
        if inner_tol < 1e-16:
            break
    res, x = best
    T = ScalarField(grid, x.reshape(grid.shape), mean_free=True)
    sol = _finish(plan, u, f, T, its, res, res <= rtol, _adjoint, dealias, pname,
                  time.perf_counter() - t0)
    if not sol.converged:
        raise NoConvergence(
            f"steady solve reached relative H^-1 residual {res:.3e} > {rtol:g} "
            f"after {its} iterations", best=sol, residual=res, iterations=its)
    log.debug("steady solve: %d its, residual %.2e, %.2fs", its, res, sol.wall_time)
    return sol


def _finish(plan, u, f, T, its, res, ok, adjoint, dealias, pname, wall):
    gx, gy = plan.grad_arrays(T.values)
    diss = float(np.mean(gx ** 2 + gy ** 2))
    prod = float(np.mean(f.values * T.values))
    return TransportSolution(T, u, f, its, res, diss, prod, ok, adjoint, dealias, pname, wall)


def solve_adjoint(u: VectorField, f: ScalarField, plan: NeumannSpectralPlan | None = None,
                  **kw) -> TransportSolution:
    """Solve ``-u . grad T = Lap T + f`` (the same solver with the flow reversed).

    The returned solution records the original ``u`` and ``adjoint=True``.
    """
    try:
        sol = solve_steady(-u, f, plan, _adjoint=True, **kw)
    except NoConvergence as exc:
        if exc.best is not None:
            exc.best.u = u
        raise
    sol.u = u
    return sol


# -------------------------------------------------------------------------
# time-dependent problem


@dataclass
class TraceSnapshot:
    """Finite-horizon averages ``<.>_tau`` accumulated up to time ``tau``.

    ``probe_lower`` and ``probe_upper`` hold the time averages of
    ``|grad inv_lap (u . grad xi)|^2`` and ``|grad inv_lap (u . grad eta - f)|^2``
    for the steady test functions passed as probes.  ``T_dot_xi`` and
    ``T_dot_eta`` are ``mean(T xi)`` and ``mean(T eta)`` at this time.
    """

    tau: float
    dissipation: float
    production: float
    terminal_norm: float
    probe_lower: float = float("nan")
    probe_upper: float = float("nan")
    T_dot_xi: float = float("nan")
    T_dot_eta: float = float("nan")

    @property
    def growth_diagnostic(self) -> float:
        """``|T(tau)| / sqrt(tau)``, which must tend to zero for admissible solutions."""
        return self.terminal_norm / math.sqrt(self.tau)


@dataclass
class UnsteadyTrace:
    tau: float
    dt: float
    dissipation: float
    production: float
    terminal_norm: float
    initial_norm: float
    T_final: ScalarField
    times: np.ndarray
    dissipation_series: np.ndarray
    snapshots: list = field(default_factory=list)
    probes: tuple | None = None
    initial_dot_xi: float = float("nan")
    initial_dot_eta: float = float("nan")
    f: ScalarField | None = None

    @property
    def growth_diagnostic(self) -> float:
        return self.terminal_norm / math.sqrt(self.tau)

    def snapshot(self, tau: float) -> TraceSnapshot:
        for s in self.snapshots:
            if abs(s.tau - tau) <= 0.5 * self.dt:
                return s
        raise KeyError(f"no checkpoint recorded at tau={tau}")


def courant_number(u: VectorField, dt: float) -> float:
    g = u.grid
    return dt * (float(np.max(np.abs(u.x.values))) / g.hx
                 + float(np.max(np.abs(u.y.values))) / g.hy)


def evolve_unsteady(u_of_t, f: ScalarField, T0: ScalarField, tau: float, dt: float,
                    plan: NeumannSpectralPlan | None = None, probes=None,
                    checkpoints=(), record_every: int = 1, cfl_max: float = 0.9,
                    dealias: bool = False) -> UnsteadyTrace:
    """Integrate ``dT/dt + u . grad T = Lap T + f`` from ``T0`` up to ``tau``.

    Strang splitting: half a step of exact spectral diffusion (with the
    source), a Heun (RK2) step of skew-symmetric advection, and another half
    step of diffusion.  Time averages use the trapezoidal rule on the step
    values.

    Args:
        u_of_t: callable ``t -> VectorField``.
        probes: optional pair ``(xi, eta)`` of steady test functions whose
            advective penalties are averaged along the way.
        checkpoints: times at which to record a :class:`TraceSnapshot`.

    Raises:
        CFLViolation: if the advective Courant number exceeds ``cfl_max``.
    """
    if not (dt > 0) or not (tau >= dt):
        raise ParameterError(f"need dt > 0 and tau >= dt (dt={dt}, tau={tau})")
    if plan is None:
        plan = NeumannSpectralPlan(f.grid)
    plan.check(f)
    plan.check(T0)
    _check_mean_free(f)
    nsteps = int(round(tau / dt))
    dt = tau / nsteps
    lam = plan.eigenvalues
    half = np.exp(-lam * dt / 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        src = np.where(lam > 0, (1 - half) / lam, dt / 2)
    from .neumann import _fwd, _inv
    fhat = _fwd(np.asarray(f.values) - f.average(), "cc")
    fsrc = src * fhat

    def diffuse(T):
        return _inv(half * _fwd(T, "cc") + fsrc, "cc")

    fv = np.asarray(f.values)
    T = np.asarray(T0.values, dtype=float) - T0.average()
    xi = eta = None
    if probes is not None:
        xi = np.asarray(probes[0].values)
        eta = np.asarray(probes[1].values)

    def instant(T, t, op):
        gx, gy = plan.grad_arrays(T)
        d = float(np.mean(gx ** 2 + gy ** 2))
        p = float(np.mean(fv * T))
        if xi is None:
            return d, p, 0.0, 0.0
        lo = plan.hminus1_sq_arrays(op(xi))
        r = op(eta) - fv
        up = plan.hminus1_sq_arrays(r - r.mean())
        return d, p, lo, up

    def adv_op(t):
        u = u_of_t(t)
        c = courant_number(u, dt)
        if c > cfl_max:
            vmax = c / dt
            raise CFLViolation(
                f"advective Courant number {c:.3f} exceeds {cfl_max} at t={t:.4g}; "
                f"use dt <= {0.8 * cfl_max / vmax:.3e}", suggested_dt=0.8 * cfl_max / vmax)
        return AdvectionOperator(plan, u, dealias=dealias, form="skew")

    cps = sorted(float(c) for c in checkpoints if 0 < c <= tau + 0.5 * dt)
    init_norm = math.sqrt(float(np.mean(T * T)))
    x0 = float(np.mean(T * xi)) if xi is not None else float("nan")
    e0 = float(np.mean(T * eta)) if eta is not None else float("nan")
    op = adv_op(0.0)
    prev = instant(T, 0.0, op)
    acc = np.zeros(4)
    times = [0.0]
    series = [prev[0]]
    snaps = []
    t = 0.0
    for k in range(1, nsteps + 1):
        T = diffuse(T)
        k1 = -op(T)
        op_next = adv_op(t + dt)
        k2 = -op_next(T + dt * k1)
        T = T + 0.5 * dt * (k1 + k2)
        T = diffuse(T)
        T -= T.mean()
        t = k * dt
        op = op_next
        cur = instant(T, t, op)
        acc += 0.5 * dt * (np.asarray(prev) + np.asarray(cur))
        prev = cur
        if k % record_every == 0 or k == nsteps:
            times.append(t)
            series.append(cur[0])
        while cps and t >= cps[0] - 0.5 * dt:
            snaps.append(_snapshot(t, acc, T, xi, eta))
            cps.pop(0)
    final = _snapshot(t, acc, T, xi, eta)
    if not snaps or abs(snaps[-1].tau - t) > 0.5 * dt:
        snaps.append(final)
    return UnsteadyTrace(tau=t, dt=dt, dissipation=final.dissipation,
                         production=final.production, terminal_norm=final.terminal_norm,
                         initial_norm=init_norm, T_final=ScalarField(f.grid, T, mean_free=True),
                         times=np.array(times), dissipation_series=np.array(series),
                         snapshots=snaps, probes=probes, initial_dot_xi=x0,
                         initial_dot_eta=e0, f=f)


def _snapshot(t, acc, T, xi, eta):
    avg = acc / t
    return TraceSnapshot(
        tau=t, dissipation=float(avg[0]), production=float(avg[1]),
        terminal_norm=math.sqrt(float(np.mean(T * T))),
        probe_lower=float(avg[2]) if xi is not None else float("nan"),
        probe_upper=float(avg[3]) if eta is not None else float("nan"),
        T_dot_xi=float(np.mean(T * xi)) if xi is not None else float("nan"),
        T_dot_eta=float(np.mean(T * eta)) if eta is not None else float("nan"))


def potential_energy_balance(u: VectorField, T: ScalarField, f: ScalarField,
                             phi: ScalarField, plan: NeumannSpectralPlan | None = None,
                             dealias: bool = True, relative: bool = True) -> float:
    """Residual of ``-<f phi> = <grad phi . (u T - grad T)>`` for a steady ``T``.

    The transport and conduction terms are evaluated with the same discrete
    operators as the solver (``<grad phi . u T> = -<phi, u . grad T>`` through
    the skew advection operator, ``<grad phi . grad T> = -<phi, Lap T>``), so
    the residual measures how well ``T`` solves the discrete equation tested
    against ``phi``.  With ``relative=True`` the residual is divided by
    ``|<f phi>| + <|grad phi|^2>^1/2 <|grad T|^2>^1/2``.
    """
    if plan is None:
        plan = NeumannSpectralPlan(f.grid)
    ph = np.asarray(phi.values)
    Tv = np.asarray(T.values)
    adv = AdvectionOperator(plan, u, dealias=dealias, form="skew")
    fphi = float(np.mean(f.values * ph))
    transport = -float(np.mean(ph * adv(Tv)))
    conduction = -float(np.mean(ph * plan.lap_arrays(Tv)))
    r = fphi + transport - conduction
    if not relative:
        return r
    gx, gy = plan.grad_arrays(ph - ph.mean())
    tx, ty = plan.grad_arrays(Tv)
    scale = abs(fphi) + math.sqrt(float(np.mean(gx ** 2 + gy ** 2))
                                  * float(np.mean(tx ** 2 + ty ** 2)))
    return r / scale if scale > 0 else r
