"""Estimators for BMO, the Hardy maximal-function integral and L^p norms.

Both the BMO and the Hardy estimators maximise over a finite sampling family
(squares, dilations), so they are lower estimates of the true quantities and
never decrease when the family is refined.
"""

from __future__ import annotations

from dataclasses import dataclass
import math
from typing import Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import integrate, ndimage

from .errors import ParameterError
from .fields import ScalarField


# -------------------------------------------------------------------------
# L^p


def lp_norm(g: ScalarField, p: float = 2.0, normalized: bool = False) -> float:
    """Midpoint-rule ``(int |g|^p)^(1/p)``; ``p = inf`` gives ``max |g|``.

    With ``normalized=True`` the integral is replaced by the domain average.
    """
    if p != math.inf and not p >= 1:
        raise ParameterError(f"need p >= 1, got {p}")
    a = np.abs(np.asarray(g.values))
    if p == math.inf:
        return float(a.max()) if a.size else 0.0
    w = 1.0 if normalized else g.grid.domain.area
    return float((w * np.mean(a ** p)) ** (1.0 / p))


# -------------------------------------------------------------------------
# BMO


def _square_family(grid, min_cells=2, shift_fraction=0.25):
    """Yield ``(mx, my, sx, sy)``: window sizes in cells and shift strides."""
    d = grid.domain
    side = min(d.lx, d.ly)
    k = 0
    out = []
    while True:
        s = side / 2 ** k
        mx = int(round(s / grid.hx))
        my = int(round(s / grid.hy))
        if mx < min_cells or my < min_cells:
            break
        if mx <= grid.nx and my <= grid.ny:
            sx = max(1, int(round(mx * shift_fraction)))
            sy = max(1, int(round(my * shift_fraction)))
            out.append((mx, my, sx, sy))
        k += 1
    return out


def _starts(n, m, s):
    st = list(range(0, n - m + 1, s))
    if st[-1] != n - m:
        st.append(n - m)
    return np.array(st)


def bmo_norm(g: ScalarField, min_cells: int = 2, shift_fraction: float = 0.25,
             return_family: bool = False):
    """Largest mean oscillation ``mean_Q |g - mean_Q g|`` over a square family.

    Squares have dyadic side lengths ``min(Lx, Ly) / 2^k`` (at least
    ``min_cells`` cells) and are placed at offsets that are multiples of
    ``shift_fraction`` of the side, plus the last position flush with the
    far wall.
    """
    v = np.asarray(g.values, dtype=float)
    grid = g.grid
    best = 0.0
    family = []
    for mx, my, sx, sy in _square_family(grid, min_cells, shift_fraction):
        ix = _starts(grid.nx, mx, sx)
        iy = _starts(grid.ny, my, sy)
        win = sliding_window_view(v, (mx, my))
        level = 0.0
        # gather windows in blocks of offsets to bound the temporary size
        per = max(1, int(4e6 // (mx * my)))
        cy = min(iy.size, per)
        cx = max(1, per // cy)
        for c0 in range(0, ix.size, cx):
            for d0 in range(0, iy.size, cy):
                w = win[np.ix_(ix[c0:c0 + cx], iy[d0:d0 + cy])]
                means = w.mean(axis=(2, 3), keepdims=True)
                osc = np.abs(w - means).mean(axis=(2, 3))
                level = max(level, float(osc.max()))
        family.append({"cells": (mx, my), "stride": (sx, sy), "count": int(ix.size * iy.size),
                       "max_oscillation": level})
        best = max(best, level)
    if return_family:
        return best, family
    return best


# -------------------------------------------------------------------------
# Hardy maximal function


def standard_bump(r):
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    m = r < 1.0
    out[m] = np.exp(-1.0 / (1.0 - r[m] ** 2))
    return out


@dataclass
class MaximalPlan:
    """Mollifier and dilation ladder for the maximal function ``sup_delta |rho_delta * g|``.

    Args:
        mollifier: radial profile supported in the unit disc (normalised to
            unit mass internally, and again per dilation on the grid).
        delta_min: smallest dilation; ``None`` means half the grid spacing,
            where the discrete kernel reduces to the identity.
        delta_max: largest dilation; ``None`` means the domain diameter.
        ratio: ladder ratio (2 gives the dyadic ladder ``delta_min 2^k``).
        samples_per_radius: the data are block-averaged to a spacing of about
            ``delta / samples_per_radius`` before convolving.
    """

    mollifier: Callable = standard_bump
    delta_min: float | None = None
    delta_max: float | None = None
    ratio: float = 2.0
    samples_per_radius: int = 4

    def ladder(self, grid) -> np.ndarray:
        dmin = 0.5 * min(grid.hx, grid.hy) if self.delta_min is None else self.delta_min
        dmax = grid.domain.diameter if self.delta_max is None else self.delta_max
        if not (0 < dmin <= dmax) or not self.ratio > 1:
            raise ParameterError("invalid dilation ladder")
        k = int(math.ceil(math.log(dmax / dmin) / math.log(self.ratio) - 1e-12))
        return dmin * self.ratio ** np.arange(k + 1)


def _kernel(mollifier, delta, hx, hy):
    kx = int(math.floor(delta / hx))
    ky = int(math.floor(delta / hy))
    x = np.arange(-kx, kx + 1) * hx
    y = np.arange(-ky, ky + 1) * hy
    X, Y = np.meshgrid(x, y, indexing="ij")
    w = mollifier(np.hypot(X, Y) / delta)
    s = w.sum()
    if s <= 0:
        w = np.zeros((1, 1))
        w[0, 0] = 1.0
        return w
    return w / s


def hardy_maximal_integral(g: ScalarField, plan: MaximalPlan | None = None,
                           return_details: bool = False):
    """``int sup_delta |rho_delta * g|`` with ``g`` extended by zero outside the domain.

    The sup runs over the plan's dilation ladder.  At dilation ``delta`` the
    data are block-averaged (mass preserving) to spacing ``c h`` with
    ``c`` the largest power of two not exceeding ``delta / (samples h)``, and
    convolved directly with the sampled kernel.  Levels are combined from
    coarse to fine by bilinear interpolation of the running maximum, and the
    integral is a midpoint sum over nested regions, each level covering the
    points within reach of its own dilations.
    """
    if plan is None:
        plan = MaximalPlan()
    grid = g.grid
    v = np.asarray(g.values, dtype=float)
    nz = np.nonzero(v)
    if nz[0].size == 0:
        return (0.0, {}) if return_details else 0.0
    # crop to the support: zero data contribute nothing to any convolution
    x0, x1 = nz[0].min(), nz[0].max() + 1
    y0, y1 = nz[1].min(), nz[1].max() + 1
    data = v[x0:x1, y0:y1]
    hx, hy = grid.hx, grid.hy
    h = max(hx, hy)
    deltas = plan.ladder(grid)
    levels = {}
    for d in deltas:
        c = 1
        while 2 * c * h <= d / plan.samples_per_radius:
            c *= 2
        levels.setdefault(c, []).append(float(d))
    cs = sorted(levels)
    cmax = cs[-1]
    # pad the cropped data to a multiple of the largest block
    px = -(-data.shape[0] // cmax) * cmax
    py = -(-data.shape[1] // cmax) * cmax
    padded = np.zeros((px, py))
    padded[:data.shape[0], :data.shape[1]] = data
    # margins (in fine cells), multiples of the next level's block size
    margins = {}
    prev = 0
    for c in cs:
        need = int(math.ceil(max(levels[c]) / min(hx, hy))) + c
        m = max(prev, need)
        m = -(-m // (2 * c)) * (2 * c)
        margins[c] = m
        prev = m
    running = None
    prev_c = None
    total = 0.0
    regions = []
    for c in reversed(cs):
        m = margins[c]
        blocks = padded.reshape(px // c, c, py // c, c).mean(axis=(1, 3))
        mb = m // c
        level = np.zeros((blocks.shape[0] + 2 * mb, blocks.shape[1] + 2 * mb))
        level[mb:mb + blocks.shape[0], mb:mb + blocks.shape[1]] = blocks
        cur = np.zeros_like(level)
        for d in levels[c]:
            k = _kernel(plan.mollifier, d, c * hx, c * hy)
            conv = ndimage.convolve(level, k, mode="constant", cval=0.0)
            np.maximum(cur, np.abs(conv), out=cur)
        if running is not None:
            # centres of this level's blocks in the coarser level's index space
            cc = prev_c
            mc = margins[cc]
            bx = np.arange(level.shape[0])
            by = np.arange(level.shape[1])
            qx = ((bx * c - m) + 0.5 * c + mc) / cc - 0.5
            qy = ((by * c - m) + 0.5 * c + mc) / cc - 0.5
            QX, QY = np.meshgrid(qx, qy, indexing="ij")
            coarse = ndimage.map_coordinates(running, [QX, QY], order=1, mode="constant",
                                             cval=0.0)
            np.maximum(cur, coarse, out=cur)
            # add the coarse level's contribution outside this level's region
            inner = np.zeros(running.shape, dtype=bool)
            lo = (mc - m) // cc
            inner[lo:lo + (px + 2 * m) // cc, lo:lo + (py + 2 * m) // cc] = True
            part = float(running[~inner].sum()) * (cc * hx) * (cc * hy)
            total += part
            regions.append({"block": cc, "contribution": part})
        running = cur
        prev_c = c
    part = float(running.sum()) * (prev_c * hx) * (prev_c * hy)
    total += part
    regions.append({"block": prev_c, "contribution": part})
    if return_details:
        return total, {"deltas": deltas.tolist(), "levels": {int(k): v for k, v in levels.items()},
                       "regions": regions}
    return total


def mollifier_mass(mollifier: Callable = standard_bump) -> float:
    """``int rho`` over the unit disc (for reporting the normalisation)."""
    return 2 * math.pi * integrate.quad(lambda r: float(mollifier(np.array([r]))[0]) * r,
                                        0.0, 1.0, epsabs=1e-14, limit=200)[0]
