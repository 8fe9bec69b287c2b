"""Exact one-dimensional optimal transport via CDF/quantile composition.

The optimal monotone map between unit-mass densities f and g on the line
is T = G^(-1) o F.  CDFs are built as the exact antiderivative of a
shape-preserving (PCHIP) interpolant of the sampled density: the
interpolant never overshoots the data, so nonnegative samples give a
monotone CDF, and smooth densities are integrated to fourth order.  Flat
CDF segments (zero-density gaps) invert to their left endpoint, which
makes the quantile function deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import DegenerateTarget, MassMismatch
from .grid import Density, Grid, GridFn

__all__ = [
    "Cdf",
    "TransportMap1D",
    "cdf_of",
    "quantile_of",
    "optimal_map_1d",
    "w2_1d",
    "w2_gradient_1d",
]


@dataclass(frozen=True)
class Cdf:
    """Nondecreasing cumulative values at the grid nodes, ending at 1."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if np.any(np.diff(v) < -1e-12):
            raise ValueError("CDF must be nondecreasing")
        if v[0] < -1e-12 or abs(v[-1] - 1.0) > 1e-12:
            raise ValueError("CDF must start at >= 0 and end at 1")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class TransportMap1D:
    """Monotone source-to-target node mapping x_i -> T_i."""

    x: np.ndarray
    mapped: np.ndarray

    def displacement(self) -> np.ndarray:
        return self.mapped - self.x


def _check_unit_pair(f: Density, g: Density):
    if f.grid != g.grid:
        raise ValueError("densities live on different grids")
    if abs(f.mass - g.mass) > 1e-10:
        raise MassMismatch(f"masses differ: {f.mass} vs {g.mass}")


def cdf_of(f: Density) -> Cdf:
    """Running quadrature of a unit-mass density, exactly 1 at the right end."""
    if f.grid.dim != 1:
        raise ValueError("cdf_of needs a 1D density")
    x = f.grid.axis(0)
    anti = PchipInterpolator(x, f.values).antiderivative()
    acc = np.asarray(anti(x))
    acc -= acc[0]
    total = acc[-1]
    if total <= 0:
        raise MassMismatch("density has no mass between the first and last node")
    vals = np.maximum.accumulate(acc / total)
    vals[-1] = 1.0
    return Cdf(f.grid, np.clip(vals, 0.0, 1.0))


def quantile_of(G: Cdf, p) -> np.ndarray:
    """Piecewise-linear inverse CDF; flat segments return their left endpoint."""
    x = G.grid.axis(0)
    F = G.values
    p = np.clip(np.atleast_1d(np.asarray(p, dtype=float)), 0.0, 1.0)
    idx = np.searchsorted(F, p, side="left")
    idx = np.clip(idx, 0, len(F) - 1)
    out = np.empty_like(p)
    at_start = idx == 0
    out[at_start] = x[0]
    rest = ~at_start
    i = idx[rest]
    dF = F[i] - F[i - 1]
    # searchsorted(left) guarantees F[i-1] < p <= F[i], hence dF > 0
    out[rest] = x[i - 1] + (p[rest] - F[i - 1]) * (x[i] - x[i - 1]) / dF
    return out


def optimal_map_1d(f: Density, g: Density) -> TransportMap1D:
    """Monotone optimal map T = G^(-1) o F between equal-mass densities."""
    _check_unit_pair(f, g)
    F = cdf_of(f)
    G = cdf_of(g)
    x = f.grid.axis(0)
    return TransportMap1D(x=x, mapped=quantile_of(G, F.values))


def w2_1d(f: Density, g: Density) -> float:
    """Squared quadratic transport distance, integral of |x - T|^2 f dx."""
    T = optimal_map_1d(f, g)
    w = f.grid.quad_weights()
    return float(np.sum(w * (T.x - T.mapped) ** 2 * f.values))


def _running_integral(grid: Grid, q: np.ndarray) -> np.ndarray:
    x = grid.axis(0)
    out = np.empty_like(q)
    out[0] = 0.0
    np.cumsum(0.5 * (q[1:] + q[:-1]) * np.diff(x), out=out[1:])
    return out


def w2_gradient_1d(f: Density, g: Density, floor: float = 1e-14) -> GridFn:
    """Fréchet-derivative kernel of half the squared transport distance.

    Returns K(x) = (x - T(x))^2 / 2 - p(end) + p(x) with
    p(x) = running integral of (y - T(y)) f(y) / g(T(y)); the kernel acts
    on zero-mean density perturbations, so its additive constant is
    immaterial and is kept as written.
    """
    _check_unit_pair(f, g)
    T = optimal_map_1d(f, g)
    x = f.grid.axis(0)
    g_at_T = np.interp(T.mapped, x, g.values)
    if np.min(g_at_T) < floor:
        raise DegenerateTarget(
            f"target density {np.min(g_at_T):.3e} below floor {floor:.3e} "
            "at mapped points"
        )
    integrand = (x - T.mapped) * f.values / g_at_T
    p = _running_integral(f.grid, integrand)
    kernel = 0.5 * (x - T.mapped) ** 2 - p[-1] + p
    return GridFn(f.grid, kernel)
