"""Rectangular domains, cell-centred grids and nodal scalar/vector fields.

Fields store nodal values on a cell-centred tensor grid with ``values[i, j]``
located at ``(x_i, y_j)`` (axis 0 is x).  Domain averages are arithmetic means
of the nodal values, which is the midpoint rule on the cells.
"""

from __future__ import annotations

from dataclasses import dataclass
import io
import math

import numpy as np

from .errors import GridMismatch, ParameterError

MEAN_FREE_TOL = 1e-12


@dataclass(frozen=True)
class Domain:
    """Axis-aligned rectangle ``(x_min, x_max) x (y_min, y_max)``."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float

    def __post_init__(self):
        for v in (self.x_min, self.x_max, self.y_min, self.y_max):
            if not math.isfinite(v):
                raise ParameterError("domain bounds must be finite")
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ParameterError(
                f"empty domain ({self.x_min},{self.x_max})x({self.y_min},{self.y_max})")

    @property
    def lx(self) -> float:
        return self.x_max - self.x_min

    @property
    def ly(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.lx * self.ly

    @property
    def diameter(self) -> float:
        return math.hypot(self.lx, self.ly)

    @classmethod
    def periodic_box(cls) -> "Domain":
        """The square ``(0, 2 pi)^2`` used by the cellular examples."""
        return cls(0.0, 2 * math.pi, 0.0, 2 * math.pi)

    @classmethod
    def symmetric_box(cls) -> "Domain":
        """The square ``(-1, 1)^2`` used by the pinching examples."""
        return cls(-1.0, 1.0, -1.0, 1.0)


@dataclass(frozen=True)
class Grid:
    """Cell-centred ``nx`` by ``ny`` grid on a :class:`Domain`."""

    domain: Domain
    nx: int
    ny: int

    def __post_init__(self):
        for n in (self.nx, self.ny):
            if int(n) != n or n < 8:
                raise ParameterError(f"grid sizes must be integers >= 8, got {n}")

    @property
    def shape(self):
        return (self.nx, self.ny)

    @property
    def hx(self) -> float:
        return self.domain.lx / self.nx

    @property
    def hy(self) -> float:
        return self.domain.ly / self.ny

    @property
    def x(self) -> np.ndarray:
        d = self.domain
        return d.x_min + (np.arange(self.nx) + 0.5) * self.hx

    @property
    def y(self) -> np.ndarray:
        d = self.domain
        return d.y_min + (np.arange(self.ny) + 0.5) * self.hy

    def mesh(self):
        """Return ``(X, Y)`` nodal coordinate arrays of shape ``(nx, ny)``."""
        return np.meshgrid(self.x, self.y, indexing="ij")

    def refine(self, factor: int = 2) -> "Grid":
        return Grid(self.domain, self.nx * factor, self.ny * factor)

    def sample(self, func, mean_free: bool = False) -> "ScalarField":
        """Evaluate ``func(X, Y)`` at the nodes."""
        X, Y = self.mesh()
        vals = np.broadcast_to(np.asarray(func(X, Y), dtype=float), self.shape)
        return ScalarField(self, np.array(vals), mean_free=mean_free)

    def zeros(self, mean_free: bool = False) -> "ScalarField":
        return ScalarField(self, np.zeros(self.shape), mean_free=mean_free)


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Nodal values on a grid.

    With ``mean_free=True`` the values are projected so that the domain
    average vanishes (to roundoff).
    """

    grid: Grid
    values: np.ndarray
    mean_free: bool = False

    def __post_init__(self):
        vals = np.array(self.values, dtype=float, copy=True)
        if vals.shape != self.grid.shape:
            raise GridMismatch(
                f"values of shape {vals.shape} on grid of shape {self.grid.shape}")
        if not np.all(np.isfinite(vals)):
            raise ParameterError("field values must be finite")
        if self.mean_free:
            vals = vals - vals.mean()
            # a second pass removes the residual of the first subtraction
            vals -= vals.mean()
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def average(self) -> float:
        return float(self.values.mean())

    def with_values(self, values, mean_free=None) -> "ScalarField":
        mf = self.mean_free if mean_free is None else mean_free
        return ScalarField(self.grid, values, mean_free=mf)

    def is_mean_free(self, rtol: float = MEAN_FREE_TOL) -> bool:
        scale = float(np.max(np.abs(self.values))) if self.values.size else 0.0
        return abs(self.average()) <= rtol * max(scale, np.finfo(float).tiny)

    def _coerce(self, other):
        if isinstance(other, ScalarField):
            _check_same_grid(self, other)
            return other.values
        return other

    def __add__(self, other):
        mf = self.mean_free and getattr(other, "mean_free", False)
        return ScalarField(self.grid, self.values + self._coerce(other), mean_free=mf)

    __radd__ = __add__

    def __sub__(self, other):
        mf = self.mean_free and getattr(other, "mean_free", False)
        return ScalarField(self.grid, self.values - self._coerce(other), mean_free=mf)

    def __rsub__(self, other):
        return ScalarField(self.grid, self._coerce(other) - self.values)

    def __neg__(self):
        return ScalarField(self.grid, -self.values, mean_free=self.mean_free)

    def __mul__(self, other):
        if isinstance(other, ScalarField):
            return ScalarField(self.grid, self.values * self._coerce(other))
        return ScalarField(self.grid, self.values * float(other), mean_free=self.mean_free)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self * (1.0 / float(other))

    def to_csv(self) -> str:
        return dump_csv(self)


@dataclass(frozen=True, eq=False)
class VectorField:
    """Pair of nodal components sharing one grid."""

    x: ScalarField
    y: ScalarField

    def __post_init__(self):
        _check_same_grid(self.x, self.y)

    @property
    def grid(self) -> Grid:
        return self.x.grid

    @classmethod
    def from_arrays(cls, grid, vx, vy) -> "VectorField":
        return cls(ScalarField(grid, vx), ScalarField(grid, vy))

    def __mul__(self, c):
        return VectorField(self.x * float(c), self.y * float(c))

    __rmul__ = __mul__

    def __neg__(self):
        return VectorField(-self.x, -self.y)

    def __add__(self, other):
        return VectorField(self.x + other.x, self.y + other.y)

    def norm_sq_average(self) -> float:
        """Domain average of ``|v|^2``."""
        return float(np.mean(self.x.values ** 2 + self.y.values ** 2))

    def max_abs(self) -> float:
        return float(np.sqrt(np.max(self.x.values ** 2 + self.y.values ** 2)))


def _check_same_grid(a, b):
    if a.grid != b.grid:
        raise GridMismatch(f"fields live on different grids: {a.grid} vs {b.grid}")


def domain_average(f: ScalarField) -> float:
    """Average of ``f`` over the domain (midpoint rule)."""
    return f.average()


def l2_inner(f: ScalarField, g: ScalarField) -> float:
    """Averaged L2 inner product ``mean(f g)``."""
    _check_same_grid(f, g)
    return float(np.mean(f.values * g.values))


def vector_inner(u: VectorField, v: VectorField) -> float:
    """Averaged inner product of two vector fields."""
    return l2_inner(u.x, v.x) + l2_inner(u.y, v.y)


def project_mean_free(f: ScalarField) -> ScalarField:
    """Subtract the domain average."""
    return ScalarField(f.grid, f.values, mean_free=True)


def dump_csv(f: ScalarField) -> str:
    """Serialize to the plain-text exchange format.

    One header line ``# nx,ny,x_min,x_max,y_min,y_max`` followed by ``nx`` rows
    of ``ny`` comma separated values (17 significant digits), row ``i``
    holding ``values[i, :]``.
    """
    g = f.grid
    d = g.domain
    buf = io.StringIO()
    buf.write("# {},{},{!r},{!r},{!r},{!r}\n".format(
        g.nx, g.ny, d.x_min, d.x_max, d.y_min, d.y_max))
    for row in f.values:
        buf.write(",".join(format(v, ".17g") for v in row))
        buf.write("\n")
    return buf.getvalue()


def load_csv(text: str, mean_free: bool = False) -> ScalarField:
    """Inverse of :func:`dump_csv`."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("#"):
        raise ParameterError("missing '# nx,ny,x_min,x_max,y_min,y_max' header")
    head = lines[0].lstrip("#").split(",")
    if len(head) != 6:
        raise ParameterError("malformed header line")
    nx, ny = int(head[0]), int(head[1])
    dom = Domain(*(float(h) for h in head[2:]))
    rows = lines[1:]
    if len(rows) != nx:
        raise ParameterError(f"expected {nx} rows, found {len(rows)}")
    vals = np.array([[float(v) for v in r.split(",")] for r in rows])
    if vals.shape != (nx, ny):
        raise ParameterError(f"expected {ny} columns per row")
    return ScalarField(Grid(dom, nx, ny), vals, mean_free=mean_free)


def save_field(path, f: ScalarField) -> None:
    with open(path, "w") as fh:
        fh.write(dump_csv(f))


def load_field(path, mean_free: bool = False) -> ScalarField:
    with open(path) as fh:
        return load_csv(fh.read(), mean_free=mean_free)
