"""Parameter sweeps, scaling fits and report files."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
import csv
import hashlib
import io
import json
import logging
import math
import os
from pathlib import Path
import time

import numpy as np

from . import __version__
from .bounds import certify_sharpness
from .boussinesq import constants_from_xi, poincare_mu, potential_coupling, rayleigh_bound
from .errors import FluxboundError, ParameterError, ResourceLimit
from .fields import Domain, Grid
from .flows import (cellular_pair, concentrated_source, pinching_energy_integrals, pinching_pair,
                    sinusoidal_source)
from .neumann import NeumannSpectralPlan, hminus1_seminorm_sq, inv_neumann_laplacian
from .optimal import limit_study, state_from_flow
from .transport import (cell_peclet, fd_affordable, fd_memory_estimate, potential_energy_balance,
                        solve_steady)

log = logging.getLogger(__name__)

EXPERIMENTS = ("cellular_scaling", "pinching_scaling", "limit_study", "rayleigh_sweep",
               "sharpness_grid")
MODELS = ("power_law", "log_model", "log_sq_model")


# -------------------------------------------------------------------------
# configuration


def _floats(v):
    if isinstance(v, str):
        v = [x for x in v.replace(";", ",").split(",") if x.strip()]
    if isinstance(v, (int, float)):
        v = [v]
    return [float(eval_number(x)) if isinstance(x, str) else float(x) for x in v]


def eval_number(s: str) -> float:
    """Parse ``"0.25"``, ``"1/4"``, ``"2^-5"`` or ``"1e3"``."""
    s = s.strip()
    if "^" in s:
        b, e = s.split("^", 1)
        return float(b) ** float(e)
    if "/" in s:
        a, b = s.split("/", 1)
        return float(a) / float(b)
    return float(s)


def log_ladder(lo: float, hi: float, n: int) -> list:
    return [float(x) for x in np.geomspace(lo, hi, n)]


@dataclass
class SweepConfig:
    """One sweep.  List-valued grids are swept as a Cartesian product.

    ``nx`` entries of 0 mean "choose from the resolution rule" (8 cells per
    ``ell`` or per source diameter ``2 eps``).
    """

    experiment: str
    ell: list = field(default_factory=lambda: [1.0])
    eps: list = field(default_factory=list)
    pe: list = field(default_factory=list)
    ra: list = field(default_factory=list)
    nx: list = field(default_factory=lambda: [0])
    out_dir: str = "results"
    seed: int = 0
    rtol: float = 1e-10
    max_iter: int = 4000
    dealias: bool = True
    allow_underresolved: bool = False
    candidates: list = field(default_factory=lambda: ["none", "construction"])
    starts: int = 0
    c_clms: float = 1.0

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ParameterError(f"unknown experiment {self.experiment!r}")
        for name in ("ell", "eps", "pe", "ra"):
            setattr(self, name, _floats(getattr(self, name)))
        self.nx = [int(x) for x in _floats(self.nx)] or [0]
        if isinstance(self.candidates, str):
            self.candidates = [c.strip() for c in self.candidates.split(",") if c.strip()]
        self.seed = int(self.seed)
        self.rtol = float(self.rtol)
        self.max_iter = int(self.max_iter)
        self.starts = int(self.starts)
        self.c_clms = float(self.c_clms)
        for name in ("dealias", "allow_underresolved"):
            v = getattr(self, name)
            if isinstance(v, str):
                setattr(self, name, v.strip().lower() in ("1", "true", "yes", "on"))
        self.validate()

    def validate(self):
        e = self.experiment
        if e in ("cellular_scaling", "sharpness_grid", "limit_study") and not self.ell:
            raise ParameterError("ell grid is empty")
        if e == "pinching_scaling" and not self.eps:
            raise ParameterError("eps grid is empty")
        if e in ("cellular_scaling", "pinching_scaling", "limit_study", "sharpness_grid") \
                and not self.pe:
            raise ParameterError("pe grid is empty")
        if e == "rayleigh_sweep" and not self.ra:
            raise ParameterError("ra grid is empty")
        if e in ("cellular_scaling", "pinching_scaling"):
            if not self.candidates:
                raise ParameterError("empty candidate list")
            bad = set(self.candidates) - {"none", "construction"}
            if bad:
                raise ParameterError(f"unknown candidates {sorted(bad)}")
        if any(p < 0 for p in self.pe):
            raise ParameterError("negative Peclet number")
        if not self.allow_underresolved:
            for scale, n in self._resolution_pairs():
                if n and not _resolved(scale, n, self._domain()):
                    raise ParameterError(
                        f"grid {n} does not resolve scale {scale:g} with 8 cells; set "
                        "allow_underresolved to keep such rows (they are flagged and "
                        "excluded from fits)")

    def _domain(self):
        return Domain.symmetric_box() if self.experiment == "pinching_scaling" else \
            Domain.periodic_box()

    def _resolution_pairs(self):
        scales = (2 * np.asarray(self.eps)).tolist() if self.experiment == "pinching_scaling" \
            else self.ell
        return [(s, n) for s in scales for n in self.nx]

    def canonical(self) -> str:
        lines = []
        for f_ in sorted(fields(self), key=lambda f_: f_.name):
            if f_.name == "out_dir":
                continue
            v = getattr(self, f_.name)
            if isinstance(v, list):
                v = ",".join(repr(x) for x in v)
            lines.append(f"{f_.name}={v}")
        return "\n".join(lines) + "\n"

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:12]

    @classmethod
    def from_text(cls, text: str, overrides: dict | None = None) -> "SweepConfig":
        """Flat ``key = value`` lines (``#`` comments); lists are comma separated."""
        kv = {}
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParameterError(f"malformed config line {raw!r}")
            k, v = line.split("=", 1)
            kv[k.strip().replace("-", "_")] = v.strip()
        if overrides:
            kv.update({k.replace("-", "_"): v for k, v in overrides.items() if v is not None})
        known = {f_.name for f_ in fields(cls)}
        unknown = set(kv) - known
        if unknown:
            raise ParameterError(f"unknown config keys {sorted(unknown)}")
        if "experiment" not in kv:
            raise ParameterError("config needs an experiment")
        return cls(**kv)

    @classmethod
    def from_file(cls, path, overrides: dict | None = None) -> "SweepConfig":
        return cls.from_text(Path(path).read_text(), overrides)


def _resolved(scale, n, domain):
    h = max(domain.lx, domain.ly) / n
    return scale / h >= 8.0 - 1e-9


def default_cells(scale, domain) -> int:
    """Smallest power of two giving 8 cells per ``scale`` (at least 32)."""
    need = 8.0 * max(domain.lx, domain.ly) / scale
    n = 32
    while n < need - 1e-9:
        n *= 2
    return n


# -------------------------------------------------------------------------
# rows


def _phi_y(grid):
    return grid.sample(lambda x, y: y)


def _steady_candidate(u, f, plan, cfg, row, prefix):
    grid = f.grid
    if cell_peclet(u, grid) > 0.5 and not fd_affordable(grid):
        raise ResourceLimit(
            f"{grid.nx}x{grid.ny} needs about {fd_memory_estimate(grid.nx * grid.ny) / 2**30:.1f} "
            "GiB for the sparse LU preconditioner")
    sol = solve_steady(u, f, plan, rtol=cfg.rtol, max_iter=cfg.max_iter, dealias=cfg.dealias)
    row[prefix + "dissipation"] = sol.dissipation
    row[prefix + "iterations"] = sol.iterations
    row[prefix + "residual"] = sol.residual
    row[prefix + "production_residual"] = sol.production_residual
    row[prefix + "balance_residual"] = abs(potential_energy_balance(
        u, sol.T, f, _phi_y(grid), plan, dealias=cfg.dealias))
    row[prefix + "converged"] = sol.converged
    return sol


def _candidate_min(row, cfg):
    vals = []
    if "none" in cfg.candidates:
        vals.append(("none", row["d_noflow"]))
    if "construction" in cfg.candidates and row.get("d_flow") is not None:
        vals.append(("construction", row["d_flow"]))
    name, v = min(vals, key=lambda t: t[1])
    row["d_min"] = v
    row["argmin"] = name


def _cellular_row(cfg, ell, pe, n):
    dom = Domain.periodic_box()
    n = n or default_cells(ell, dom)
    grid = Grid(dom, n, n)
    plan = NeumannSpectralPlan(grid)
    f = sinusoidal_source(ell, grid)
    row = {"ell": ell, "pe": pe, "nx": n, "resolved": _resolved(ell, n, dom),
           "d_noflow": hminus1_seminorm_sq(f, plan), "d_flow": None}
    if pe > 0 and "construction" in cfg.candidates:
        u = cellular_pair(ell).velocity_field(grid, pe)
        _steady_candidate(u, f, plan, cfg, row, "flow_")
        row["d_flow"] = row.pop("flow_dissipation")
    _candidate_min(row, cfg)
    return row


def _pinching_row(cfg, eps, pe, n):
    dom = Domain.symmetric_box()
    n = n or default_cells(2 * eps, dom)
    grid = Grid(dom, n, n)
    plan = NeumannSpectralPlan(grid)
    fl = pinching_pair(eps)
    f = fl.source_field(grid)
    ints = pinching_energy_integrals(fl)
    row = {"eps": eps, "pe": pe, "nx": n, "resolved": _resolved(2 * eps, n, dom),
           "d_noflow": hminus1_seminorm_sq(f, plan), "d_flow": None,
           "u_sq": ints["u_sq"], "grad_eta_sq": ints["grad_eta_sq"],
           "energy_product": ints["u_sq"] * ints["grad_eta_sq"],
           "log_inv_4eps": math.log(1.0 / (4.0 * eps))}
    if pe > 0 and "construction" in cfg.candidates:
        u = fl.velocity_field(grid, pe)
        _steady_candidate(u, f, plan, cfg, row, "flow_")
        row["d_flow"] = row.pop("flow_dissipation")
        row["rescaled_flow"] = row["d_flow"] * pe ** 2 / row["log_inv_4eps"] ** 2
    _candidate_min(row, cfg)
    return row


def _sharpness_row(cfg, ell, pe, n):
    dom = Domain.periodic_box()
    n = n or default_cells(ell, dom)
    grid = Grid(dom, n, n)
    plan = NeumannSpectralPlan(grid)
    f = sinusoidal_source(ell, grid)
    u = cellular_pair(ell).velocity_field(grid, pe)
    cert = certify_sharpness(u, f, plan, rtol=cfg.rtol, max_iter=cfg.max_iter)
    return {"ell": ell, "pe": pe, "nx": n, "resolved": _resolved(ell, n, dom),
            "dissipation": cert.dissipation, "lower": cert.lower, "upper": cert.upper,
            "gap_lower": cert.gap_lower, "gap_upper": cert.gap_upper,
            "production_residual": cert.diagnostics["production_residual"]}


def _limit_rows(cfg, ell, n):
    dom = Domain.periodic_box()
    n = n or max(32, default_cells(ell, dom))
    grid = Grid(dom, n, n)
    plan = NeumannSpectralPlan(grid)
    f = sinusoidal_source(ell, grid)
    cp = cellular_pair(ell)
    X, Y = grid.mesh()
    init = state_from_flow(f, cp.psi(X, Y), cfg.pe[0], plan, label="cellular")
    u0 = cp.velocity_field(grid)
    T0 = cp.eta_field(grid)
    study = limit_study(f, cfg.pe, reference_pair=(u0, T0), init=init, plan=plan,
                        starts=cfg.starts, seed=cfg.seed)
    rows = []
    for r in study.rows():
        r.update({"ell": ell, "nx": n, "resolved": _resolved(ell, n, dom),
                  "reference": study.reference_value})
        rows.append(r)
    return rows


def rayleigh_configurations(eps: float = 1 / 32, n_periodic: int = 64, n_square: int = 256):
    """The three standard coupling configurations (zero, positive, negative sign)."""
    gp = Grid(Domain.periodic_box(), n_periodic, n_periodic)
    gs = Grid(Domain.symmetric_box(), n_square, n_square)
    src = concentrated_source(eps)
    fs = src.field(gs)
    return [("sinusoidal", sinusoidal_source(1.0, gp), gp),
            ("concentrated", fs, gs),
            ("reflected", src.reflected().field(gs), gs)]


def _rayleigh_rows(cfg):
    eps = cfg.eps[0] if cfg.eps else 1 / 32
    rows = []
    mu_cache = {}
    for name, f, grid in rayleigh_configurations(eps):
        plan = NeumannSpectralPlan(grid)
        phi = _phi_y(grid)
        cpl = potential_coupling(f, phi)
        key = (grid.domain.lx, grid.domain.ly, grid.nx)
        if key not in mu_cache:
            mu_cache[key] = poincare_mu(Grid(grid.domain, min(grid.nx, 128), min(grid.ny, 128)))
        xi = inv_neumann_laplacian(f, plan)
        consts = constants_from_xi(xi, f, mu_cache[key], cfg.c_clms, plan, label="inv_lap f")
        for ra in cfg.ra:
            rep = rayleigh_bound(consts, cpl, 1.0, ra)
            d = rep.as_dict()
            d.update({"source": name})
            rows.append(d)
    return rows


# -------------------------------------------------------------------------
# sweep


@dataclass
class SweepTable:
    config: SweepConfig
    rows: list
    manifest: dict

    @property
    def failures(self) -> int:
        return sum(1 for r in self.rows if r.get("error"))

    def column(self, key, only_resolved=True):
        out = []
        for r in self.rows:
            if r.get("error") or (only_resolved and r.get("resolved") is False):
                continue
            out.append(r.get(key))
        return out


def _threads():
    try:
        return max(1, int(os.environ.get("FLUXBOUND_THREADS", "1")))
    except ValueError:
        return 1


def _guard(fn, params):
    t0 = time.perf_counter()
    try:
        out = fn()
    except FluxboundError as exc:
        out = dict(params)
        out["error"] = f"{type(exc).__name__}: {exc}"
    rows = out if isinstance(out, list) else [out]
    for r in rows:
        r.setdefault("error", "")
        r["wall_time"] = time.perf_counter() - t0
    return rows


def run_sweep(config: SweepConfig) -> SweepTable:
    """Run every grid point of ``config``; per-row failures are recorded, not raised."""
    cfg = config
    tasks = []
    if cfg.experiment == "cellular_scaling":
        for ell in cfg.ell:
            for pe in cfg.pe:
                for n in cfg.nx:
                    tasks.append(((lambda a=ell, b=pe, c=n: _cellular_row(cfg, a, b, c)),
                                  {"ell": ell, "pe": pe, "nx": n}))
    elif cfg.experiment == "pinching_scaling":
        for eps in cfg.eps:
            for pe in cfg.pe:
                for n in cfg.nx:
                    tasks.append(((lambda a=eps, b=pe, c=n: _pinching_row(cfg, a, b, c)),
                                  {"eps": eps, "pe": pe, "nx": n}))
    elif cfg.experiment == "sharpness_grid":
        for ell in cfg.ell:
            for pe in cfg.pe:
                for n in cfg.nx:
                    tasks.append(((lambda a=ell, b=pe, c=n: _sharpness_row(cfg, a, b, c)),
                                  {"ell": ell, "pe": pe, "nx": n}))
    elif cfg.experiment == "limit_study":
        for ell in cfg.ell:
            for n in cfg.nx:
                tasks.append(((lambda a=ell, c=n: _limit_rows(cfg, a, c)), {"ell": ell, "nx": n}))
    else:
        tasks.append((lambda: _rayleigh_rows(cfg), {}))
    workers = min(_threads(), len(tasks))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(lambda t: _guard(*t), tasks))
    else:
        results = [_guard(*t) for t in tasks]
    rows = [r for chunk in results for r in chunk]
    manifest = {"experiment": cfg.experiment, "config_hash": cfg.config_hash,
                "config": cfg.canonical(), "seed": cfg.seed,
                "tolerances": {"rtol": cfg.rtol, "max_iter": cfg.max_iter},
                "version": __version__, "numpy": np.__version__, "rows": len(rows),
                "failures": sum(1 for r in rows if r.get("error"))}
    return SweepTable(cfg, rows, manifest)


# -------------------------------------------------------------------------
# fits


@dataclass
class ScalingFit:
    model: str
    exponent: float
    prefactor: float
    r2: float
    residuals: list
    n: int
    excluded: list = field(default_factory=list)

    def predict(self, x):
        x = np.asarray(x, dtype=float)
        if self.model == "power_law":
            return self.prefactor * x ** self.exponent
        t = np.log(1.0 / x)
        if self.model == "log_sq_model":
            t = t ** 2
        return self.prefactor + self.exponent * t

    def as_dict(self) -> dict:
        return {"model": self.model, "exponent": self.exponent, "prefactor": self.prefactor,
                "r2": self.r2, "n": self.n, "residuals": list(self.residuals),
                "excluded": list(self.excluded)}


def fit_scaling(table, model: str, x_key: str | None = None, y_key: str | None = None,
                where=None) -> ScalingFit:
    """Least squares in transformed coordinates.

    ``power_law``: ``log y = log A + p log x`` (exponent ``p``, prefactor ``A``).
    ``log_model``: ``y = a + b log(1/x)``; ``log_sq_model``: ``y = a + b log(1/x)^2``
    (exponent ``b``, prefactor ``a``).

    ``table`` is a :class:`SweepTable`, a list of row dicts (then ``x_key`` and
    ``y_key`` are required) or an ``(x, y)`` pair.  Rows with errors or
    flagged as under-resolved are excluded and listed in ``excluded``.
    """
    if model not in MODELS:
        raise ParameterError(f"unknown model {model!r}")
    excluded = []
    if isinstance(table, tuple) and len(table) == 2:
        x = np.asarray(table[0], dtype=float)
        y = np.asarray(table[1], dtype=float)
    else:
        rows = table.rows if isinstance(table, SweepTable) else table
        xs, ys = [], []
        for i, r in enumerate(rows):
            if where is not None and not where(r):
                continue
            if r.get("error") or r.get("resolved") is False or r.get(y_key) is None:
                excluded.append(i)
                continue
            xs.append(r[x_key])
            ys.append(r[y_key])
        x = np.asarray(xs, dtype=float)
        y = np.asarray(ys, dtype=float)
    if x.size < 4:
        raise ParameterError(f"need at least 4 points in the fit window, got {x.size}")
    if model == "power_law":
        if np.any(x <= 0) or np.any(y <= 0):
            raise ParameterError("power-law fit needs positive data")
        t, v = np.log(x), np.log(y)
    else:
        if np.any(x <= 0):
            raise ParameterError("log models need positive x")
        t = np.log(1.0 / x)
        if model == "log_sq_model":
            t = t ** 2
        v = y
    if np.ptp(t) == 0:
        raise ParameterError("degenerate fit window (all abscissae equal)")
    if np.ptp(v) == 0:
        slope, icpt = 0.0, float(v[0])
    else:
        slope, icpt = np.polyfit(t, v, 1)
    res = v - (slope * t + icpt)
    ss_tot = float(np.sum((v - v.mean()) ** 2))
    ss_res = float(np.sum(res ** 2))
    r2 = 1.0 if ss_tot == 0 else min(1.0, max(0.0, 1.0 - ss_res / ss_tot))
    pref = math.exp(icpt) if model == "power_law" else float(icpt)
    return ScalingFit(model, float(slope), pref, r2, res.tolist(), int(x.size), excluded)


# -------------------------------------------------------------------------
# reports


def _fmt(v):
    if isinstance(v, bool) or v is None:
        return "" if v is None else str(v).lower()
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def _columns(rows, volatile=("wall_time",)):
    cols = []
    for r in rows:
        for k in r:
            if k not in cols and k not in volatile:
                cols.append(k)
    return cols


def table_csv(rows, columns=None) -> str:
    cols = columns or _columns(rows)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in cols])
    return buf.getvalue()


def emit_report(results: SweepTable, out_dir=None, fits: dict | None = None) -> dict:
    """Write ``<experiment>_<hash>.csv``, ``.json`` and a numeric ``.dat`` table.

    The CSV excludes wall-clock columns, so identical configurations give
    byte-identical CSV files.  Returns the written paths.
    """
    out = Path(out_dir or results.config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{results.config.experiment}_{results.config.config_hash}"
    cols = _columns(results.rows)
    paths = {"csv": out / f"{stem}.csv", "json": out / f"{stem}.json", "dat": out / f"{stem}.dat"}
    paths["csv"].write_text(table_csv(results.rows, cols))
    numeric = [c for c in cols if all(
        isinstance(r.get(c), (int, float, np.integer, np.floating)) and not isinstance(r.get(c), bool)
        for r in results.rows)]
    lines = ["# " + " ".join(numeric)]
    for r in results.rows:
        lines.append(" ".join(repr(float(r[c])) for c in numeric))
    paths["dat"].write_text("\n".join(lines) + "\n")
    summary = {"manifest": results.manifest,
               "fits": {k: v.as_dict() for k, v in (fits or {}).items()},
               "rows": [{k: _jsonable(v) for k, v in r.items()} for r in results.rows]}
    paths["json"].write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return {k: str(v) for k, v in paths.items()}


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, float) and not math.isfinite(v):
        return repr(v)
    return v
