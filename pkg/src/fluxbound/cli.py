"""Command line interface: ``fluxbound {solve,bound,norms,flow,optimize,rayleigh,sweep}``.

Exit codes: 0 on success, 2 when a sweep recorded per-row failures, 1 on
configuration or input errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
from pathlib import Path
import sys

import numpy as np

from .bounds import (certify_sharpness, energy_lower_bound, lower_bound_steady,
                     quotient_lower_bound, upper_bound_steady)
from .boussinesq import constants_from_xi, poincare_mu, potential_coupling, rayleigh_bound
from .errors import FluxboundError
from .fields import Domain, Grid, ScalarField, VectorField, load_field, save_field
from .flows import (cellular_pair, concentrated_source, log_test_function, pinching_pair,
                    sinusoidal_source)
from .harness import (SweepConfig, emit_report, eval_number, log_ladder, run_sweep, table_csv)
from .neumann import NeumannSpectralPlan, inv_neumann_laplacian
from .norms import bmo_norm, hardy_maximal_integral, lp_norm
from .optimal import limit_study, optimize_flow, state_from_flow
from .transport import solve_steady


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


class UsageError(FluxboundError):
    pass


# -------------------------------------------------------------------------
# argument helpers


def parse_spec(s: str):
    """``"name:key=value,key=value"`` -> ``(name, {key: float})``."""
    name, _, rest = s.partition(":")
    params = {}
    for item in filter(None, rest.split(",")):
        k, _, v = item.partition("=")
        if not v:
            raise UsageError(f"malformed parameter {item!r} in {s!r}")
        params[k.strip()] = eval_number(v)
    return name.strip(), params


def parse_grid(s: str):
    try:
        a, b = s.lower().split("x")
        return int(a), int(b)
    except ValueError:
        raise UsageError(f"grid must look like 128x128, got {s!r}") from None


def parse_ladder(s: str):
    """``"10,30,100"`` or ``"log:lo:hi:n"``."""
    if s.startswith("log:"):
        _, lo, hi, n = s.split(":")
        return log_ladder(eval_number(lo), eval_number(hi), int(n))
    return [eval_number(x) for x in s.split(",") if x.strip()]


def _is_file(s):
    return s is not None and Path(s).suffix.lower() in (".csv", ".txt") and Path(s).exists()


def _domain_for(name):
    if name in ("sinusoidal", "cellular"):
        return Domain.periodic_box()
    if name in ("concentrated", "reflected", "pinching"):
        return Domain.symmetric_box()
    raise UsageError(f"unknown name {name!r}")


def build_grid(source: str, grid: str) -> Grid:
    if _is_file(source):
        return load_field(source).grid
    nx, ny = parse_grid(grid)
    return Grid(_domain_for(parse_spec(source)[0]), nx, ny)


def build_source(spec: str, grid: Grid) -> ScalarField:
    if _is_file(spec):
        f = load_field(spec)
        if f.grid != grid:
            raise UsageError("source file grid does not match")
        return ScalarField(grid, f.values, mean_free=True)
    name, p = parse_spec(spec)
    if name == "sinusoidal":
        return sinusoidal_source(p.get("ell", 1.0), grid)
    if name == "concentrated":
        return concentrated_source(p.get("eps", 1 / 32)).field(grid)
    if name == "reflected":
        return concentrated_source(p.get("eps", 1 / 32)).reflected().field(grid)
    raise UsageError(f"unknown source {name!r}")


def build_flow(spec: str, grid: Grid, pe: float | None) -> VectorField:
    if "," in spec and all(_is_file(s) for s in spec.split(",")):
        a, b = (load_field(s) for s in spec.split(","))
        u = VectorField.from_arrays(grid, a.values, b.values)
        if pe is not None and pe > 0:
            u = u * (pe / math.sqrt(u.norm_sq_average()))
        return u
    name, p = parse_spec(spec)
    if name == "none":
        z = np.zeros(grid.shape)
        return VectorField.from_arrays(grid, z, z)
    if name == "cellular":
        fl = cellular_pair(p.get("ell", 1.0))
    elif name == "pinching":
        fl = pinching_pair(p.get("eps", 1 / 32))
    else:
        raise UsageError(f"unknown flow {name!r}")
    if pe == 0:
        z = np.zeros(grid.shape)
        return VectorField.from_arrays(grid, z, z)
    return fl.velocity_field(grid, pe)


def build_test_function(spec: str, f: ScalarField, grid: Grid, flow: str | None = None):
    if _is_file(spec):
        return load_field(spec)
    name, p = parse_spec(spec)
    if name == "inv_lap":
        return inv_neumann_laplacian(f) * p.get("scale", 1.0)
    if name == "log":
        return log_test_function(p.get("eps", 1 / 32), grid)
    if name == "eta":
        fname, fp = parse_spec(flow or "")
        fl = cellular_pair(fp.get("ell", 1.0)) if fname == "cellular" else \
            pinching_pair(fp.get("eps", 1 / 32))
        return fl.eta_field(grid)
    raise UsageError(f"unknown test function {name!r}")


def build_potential(spec: str, grid: Grid) -> ScalarField:
    if _is_file(spec):
        return load_field(spec)
    if spec in ("z", "y"):
        return grid.sample(lambda x, y: y)
    raise UsageError(f"unknown potential {spec!r}")


def _emit(obj, out=None):
    text = json.dumps(obj, indent=2, sort_keys=True, default=_default)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text + "\n")
    print(text)


def _default(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(type(v))


# -------------------------------------------------------------------------
# subcommands


def cmd_solve(a):
    grid = build_grid(a.source, a.grid)
    f = build_source(a.source, grid)
    u = build_flow(a.flow, grid, a.pe)
    sol = solve_steady(u, f, rtol=a.rtol)
    summary = {"dissipation": sol.dissipation, "production": sol.production,
               "production_residual": sol.production_residual, "residual": sol.residual,
               "iterations": sol.iterations, "converged": sol.converged,
               "preconditioner": sol.preconditioner, "pe": sol.pe,
               "grid": list(grid.shape), "wall_time": sol.wall_time}
    if a.out:
        out = Path(a.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        save_field(out.with_suffix(".csv"), sol.T)
        _emit(summary, out.with_suffix(".json"))
    else:
        _emit(summary)
    return 0


def cmd_bound(a):
    grid = build_grid(a.source, a.grid)
    f = build_source(a.source, grid)
    plan = NeumannSpectralPlan(grid)
    if a.mode == "certify":
        u = build_flow(a.flow, grid, a.pe)
        cert = certify_sharpness(u, f, plan, rtol=a.rtol)
        _emit(cert.as_dict(), a.out)
        return 0
    if a.mode == "energy":
        xi = build_test_function(a.xi or "inv_lap", f, grid, a.flow)
        val = energy_lower_bound(xi, f, a.pe ** 2, a.c_clms, plan=plan)
        _emit({"mode": "energy", "bound": val, "pe": a.pe, "c_clms": a.c_clms}, a.out)
        return 0
    u = build_flow(a.flow, grid, a.pe)
    if a.mode == "upper":
        eta = build_test_function(a.eta or "eta", f, grid, a.flow)
        val = upper_bound_steady(eta, u, f, plan)
    else:
        xi = build_test_function(a.xi or "inv_lap", f, grid, a.flow)
        fn = lower_bound_steady if a.mode == "lower" else quotient_lower_bound
        val = fn(xi, u, f, plan)
    _emit({"mode": a.mode, "bound": val, "pe": a.pe}, a.out)
    return 0


def cmd_norms(a):
    g = load_field(a.field)
    if a.which == "bmo":
        val, fam = bmo_norm(g, return_family=True)
        out = {"which": "bmo", "estimate": val, "family": fam}
    elif a.which == "hardy":
        val, det = hardy_maximal_integral(g, return_details=True)
        out = {"which": "hardy", "estimate": val, "details": det}
    else:
        p = math.inf if a.p in ("inf", "infinity") else float(a.p)
        out = {"which": "lp", "p": a.p, "estimate": lp_norm(g, p)}
    _emit(out, a.out)
    return 0


def cmd_flow(a):
    nx, ny = parse_grid(a.grid)
    if a.name == "cellular":
        fl = cellular_pair(a.ell)
    else:
        fl = pinching_pair(a.eps)
    grid = Grid(fl.domain, nx, ny)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if a.emit in ("velocity", "all"):
        u = fl.velocity_field(grid, a.pe)
        for comp, fld in (("ux", u.x), ("uy", u.y)):
            save_field(out / f"{a.name}_{comp}.csv", fld)
            written.append(str(out / f"{a.name}_{comp}.csv"))
    if a.emit in ("eta", "all"):
        save_field(out / f"{a.name}_eta.csv", fl.eta_field(grid))
        written.append(str(out / f"{a.name}_eta.csv"))
    if a.emit in ("source", "all"):
        save_field(out / f"{a.name}_source.csv", fl.source_field(grid))
        written.append(str(out / f"{a.name}_source.csv"))
    _emit({"written": written, "resolution_ok": fl.resolution_ok(grid)})
    return 0


def cmd_optimize(a):
    grid = build_grid(a.source, a.grid)
    f = build_source(a.source, grid)
    plan = NeumannSpectralPlan(grid)
    pes = parse_ladder(a.pe)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    name, p = parse_spec(a.source)
    init = None
    if name == "sinusoidal":
        cp = cellular_pair(p.get("ell", 1.0))
        init = state_from_flow(f, cp.psi(*grid.mesh()), pes[0], plan, label="cellular")
    if len(pes) >= 4:
        study = limit_study(f, pes, init=init, plan=plan, starts=a.starts, seed=a.seed)
        states, rows = study.states, study.rows()
    else:
        states, rows = [], []
        for pe in pes:
            st = optimize_flow(f, pe, init=init, plan=plan, starts=a.starts, seed=a.seed)
            states.append(st)
            rows.append({"pe": pe, "m": st.objective, "pe2m": pe * pe * st.objective,
                         "constraint_activity": st.constraint_activity, "residual": None})
    for st in states:
        (out / f"optimize_pe{st.pe:g}.json").write_text(
            json.dumps(st.summary(), indent=2, sort_keys=True, default=_default) + "\n")
    (out / "ladder.csv").write_text(table_csv(rows, ["pe", "m", "pe2m", "constraint_activity",
                                                     "residual"]))
    _emit({"rows": rows})
    return 0


def cmd_rayleigh(a):
    grid = build_grid(a.source, a.grid)
    f = build_source(a.source, grid)
    phi = build_potential(a.potential, grid)
    plan = NeumannSpectralPlan(grid)
    xi = build_test_function(a.xi, f, grid)
    mu = poincare_mu(Grid(grid.domain, min(grid.nx, 128), min(grid.ny, 128)))
    consts = constants_from_xi(xi, f, mu, a.c_clms, plan, label=a.xi)
    cpl = potential_coupling(f, phi)
    gx, gy = np.gradient(np.asarray(phi.values), grid.hx, grid.hy, edge_order=2)
    G = float(np.mean(gx ** 2 + gy ** 2))
    rows = []
    for ra in parse_ladder(a.ra):
        rep = rayleigh_bound(consts, cpl, G, ra)
        rows.append({"ra": ra, "regime": rep.regime, "bound": rep.value,
                     "threshold": rep.threshold, "above_threshold": rep.above_threshold()})
    text = table_csv(rows, ["ra", "regime", "bound", "threshold", "above_threshold"])
    if a.out:
        Path(a.out).write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_sweep(a):
    overrides = {}
    for kv in a.set or []:
        k, _, v = kv.partition("=")
        overrides[k.strip()] = v.strip()
    if a.out:
        overrides["out_dir"] = a.out
    if a.config:
        cfg = SweepConfig.from_file(a.config, overrides)
    else:
        cfg = SweepConfig.from_text("", overrides)
    table = run_sweep(cfg)
    paths = emit_report(table)
    _emit({"paths": paths, "rows": len(table.rows), "failures": table.failures})
    return 2 if table.failures else 0


def build_parser():
    p = _Parser(prog="fluxbound", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, flow=True):
        sp.add_argument("--source", default="sinusoidal:ell=1")
        sp.add_argument("--grid", default="64x64")
        sp.add_argument("--pe", type=float, default=10.0)
        sp.add_argument("--rtol", type=float, default=1e-10)
        sp.add_argument("--out")
        if flow:
            sp.add_argument("--flow", default="cellular:ell=1")

    s = sub.add_parser("solve", help="steady advection-diffusion solve")
    common(s)
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("bound", help="variational bounds")
    common(s)
    s.add_argument("--mode", choices=["lower", "upper", "quotient", "certify", "energy"],
                   default="certify")
    s.add_argument("--xi")
    s.add_argument("--eta")
    s.add_argument("--c-clms", dest="c_clms", type=float, default=1.0)
    s.set_defaults(func=cmd_bound)

    s = sub.add_parser("norms", help="BMO, Hardy and L^p estimates of a field file")
    s.add_argument("--field", required=True)
    s.add_argument("--which", choices=["bmo", "hardy", "lp"], default="bmo")
    s.add_argument("--p", default="2")
    s.add_argument("--out")
    s.set_defaults(func=cmd_norms)

    s = sub.add_parser("flow", help="emit a flow construction on a grid")
    s.add_argument("--name", choices=["cellular", "pinching"], required=True)
    s.add_argument("--ell", type=float, default=1.0)
    s.add_argument("--eps", type=float, default=1 / 32)
    s.add_argument("--pe", type=float)
    s.add_argument("--grid", default="64x64")
    s.add_argument("--emit", choices=["velocity", "eta", "source", "all"], default="all")
    s.add_argument("--out", default=".")
    s.set_defaults(func=cmd_flow)

    s = sub.add_parser("optimize", help="minimise dissipation over flows")
    s.add_argument("--source", default="sinusoidal:ell=1")
    s.add_argument("--grid", default="32x32")
    s.add_argument("--pe", default="10")
    s.add_argument("--starts", type=int, default=0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default="optimize")
    s.set_defaults(func=cmd_optimize)

    s = sub.add_parser("rayleigh", help="Rayleigh-number bounds")
    s.add_argument("--source", default="sinusoidal:ell=1")
    s.add_argument("--grid", default="64x64")
    s.add_argument("--potential", default="z")
    s.add_argument("--xi", default="inv_lap")
    s.add_argument("--ra", default="log:1e3:1e5:5")
    s.add_argument("--c-clms", dest="c_clms", type=float, default=1.0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_rayleigh)

    s = sub.add_parser("sweep", help="run a parameter sweep from a key=value config")
    s.add_argument("--config")
    s.add_argument("--set", action="append", metavar="KEY=VALUE")
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    a = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if a.verbose else logging.WARNING)
    try:
        return a.func(a)
    except (FluxboundError, OSError, ValueError) as exc:
        print(f"fluxbound: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
