"""Uniform grids, sampled fields, densities, quadrature, noise and spectra.

Two sampling conventions coexist and are never converted implicitly:

* ``periodic``:  n nodes x_i = lo + i*h with h = (hi - lo)/n.  The right
  domain endpoint is the wrap-around image of the left one, quadrature is
  the rectangle rule h**d * sum(values) (spectrally accurate for smooth
  periodic fields), and Fourier work is exact DFT algebra.
* ``endpoint``:  n nodes x_i = lo + i*h with h = (hi - lo)/(n - 1), both
  boundary points sampled, trapezoid quadrature.  Used by the PDE and
  finite-interval convolution models where boundary conditions live.

Fourier transforms everywhere use the unitary angular-frequency
convention fhat(xi) = (2*pi)**(-d/2) * integral f(x) exp(-i xi.x) dx, so
that sum |fhat|**2 * dxi**d equals the squared L2 norm exactly on the
grid.  All inner products are quadrature-weighted.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import AllZeroInput

__all__ = [
    "Grid",
    "GridFn",
    "Density",
    "NoiseSpec",
    "SpectrumReport",
    "mass",
    "inner",
    "norm_l2",
    "make_density",
    "add_noise",
    "spectrum_report",
    "high_frequency_fraction",
    "write_gridfn_csv",
    "read_gridfn_csv",
]

_CONVENTIONS = ("periodic", "endpoint")


def _as_tuple(v, dim):
    if np.isscalar(v):
        return (float(v),) * dim
    t = tuple(float(x) for x in v)
    if len(t) != dim:
        raise ValueError(f"expected {dim} bounds, got {len(t)}")
    return t


@dataclass(frozen=True)
class Grid:
    """Uniform 1D or 2D grid with an explicit sampling convention."""

    dim: int
    lo: tuple
    hi: tuple
    n: int
    convention: str = "periodic"

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError("dim must be 1 or 2")
        if self.convention not in _CONVENTIONS:
            raise ValueError(f"convention must be one of {_CONVENTIONS}")
        if self.n < 4:
            raise ValueError("need at least 4 samples per axis")
        object.__setattr__(self, "lo", _as_tuple(self.lo, self.dim))
        object.__setattr__(self, "hi", _as_tuple(self.hi, self.dim))
        for a, b in zip(self.lo, self.hi):
            if not b > a:
                raise ValueError("hi must exceed lo on every axis")

    @property
    def h(self) -> tuple:
        """Grid spacing per axis."""
        div = self.n if self.convention == "periodic" else self.n - 1
        return tuple((b - a) / div for a, b in zip(self.lo, self.hi))

    @property
    def lengths(self) -> tuple:
        return tuple(b - a for a, b in zip(self.lo, self.hi))

    def axis(self, i: int = 0) -> np.ndarray:
        """Node coordinates along axis i."""
        return self.lo[i] + self.h[i] * np.arange(self.n)

    def meshes(self):
        """Coordinate arrays shaped like field values (1D: single array)."""
        if self.dim == 1:
            return (self.axis(0),)
        return np.meshgrid(self.axis(0), self.axis(1), indexing="ij")

    def quad_weights(self) -> np.ndarray:
        """Quadrature weights, shaped like field values."""
        if self.convention == "periodic":
            w1 = [np.full(self.n, self.h[i]) for i in range(self.dim)]
        else:
            w1 = []
            for i in range(self.dim):
                w = np.full(self.n, self.h[i])
                w[0] *= 0.5
                w[-1] *= 0.5
                w1.append(w)
        if self.dim == 1:
            return w1[0]
        return np.outer(w1[0], w1[1])

    def cell_volume(self) -> float:
        return float(np.prod(self.h))


@dataclass(frozen=True)
class GridFn:
    """A real scalar field sampled on a grid.  Immutable after construction."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        shape = (self.grid.n,) if self.grid.dim == 1 else (self.grid.n, self.grid.n)
        if v.shape != shape:
            raise ValueError(f"values shape {v.shape} does not match grid {shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("values must be finite")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def with_values(self, values: np.ndarray) -> "GridFn":
        return GridFn(self.grid, values)


@dataclass(frozen=True)
class Density:
    """Nonnegative field with its recorded quadrature mass."""

    base: GridFn
    mass: float

    def __post_init__(self):
        if np.any(self.base.values < 0):
            raise ValueError("density values must be nonnegative")
        if not self.mass > 0:
            raise ValueError("density mass must be positive")
        q = mass(self.base)
        if abs(q - self.mass) > 1e-12 * max(abs(self.mass), 1.0):
            raise ValueError(f"recorded mass {self.mass} != quadrature {q}")

    @property
    def grid(self) -> Grid:
        return self.base.grid

    @property
    def values(self) -> np.ndarray:
        return self.base.values


@dataclass(frozen=True)
class NoiseSpec:
    """Multiplicative uniform noise: values scaled by (1 + level*u), u ~ U[-1,1]."""

    level: float
    seed: int = 0
    kind: str = "multiplicative-uniform"

    def __post_init__(self):
        if not 0.0 <= self.level < 1.0:
            raise ValueError("noise level must be in [0, 1) to preserve positivity")
        if self.kind != "multiplicative-uniform":
            raise ValueError("only multiplicative-uniform noise is supported")


def mass(f: GridFn) -> float:
    """Quadrature of f over the domain (rectangle rule or trapezoid)."""
    return float(np.sum(f.grid.quad_weights() * f.values))


def inner(f: GridFn, g: GridFn) -> float:
    """Quadrature-weighted L2 inner product."""
    if f.grid != g.grid:
        raise ValueError("fields live on different grids")
    return float(np.sum(f.grid.quad_weights() * f.values * g.values))


def norm_l2(f: GridFn) -> float:
    return float(np.sqrt(max(inner(f, f), 0.0)))


def make_density(f: GridFn, target_mass: float = 1.0, floor: float = 0.0) -> Density:
    """Clamp negatives, lift by floor*max, rescale to the target mass.

    ``floor`` is relative to the maximum of the clamped field; the default
    0 keeps already-nonnegative inputs untouched up to the rescale.
    """
    if floor < 0:
        raise ValueError("floor must be nonnegative")
    if not target_mass > 0:
        raise ValueError("target mass must be positive")
    v = np.maximum(f.values, 0.0)
    peak = float(v.max())
    if peak <= 0.0:
        raise AllZeroInput("clamped field has zero mass")
    v = v + floor * peak
    m = float(np.sum(f.grid.quad_weights() * v))
    if m <= 0.0:
        raise AllZeroInput("clamped field has zero mass")
    v *= target_mass / m
    return Density(GridFn(f.grid, v), target_mass)


def add_noise(g: Density, spec: NoiseSpec) -> Density:
    """Multiplicative uniform noise with the original mass restored.

    Deterministic for a fixed seed; level 0 returns bitwise-equal values.
    """
    if spec.level == 0.0:
        return Density(GridFn(g.grid, g.values), g.mass)
    rng = np.random.default_rng(spec.seed)
    u = rng.uniform(-1.0, 1.0, size=g.values.shape)
    v = g.values * (1.0 + spec.level * u)
    v = np.maximum(v, 0.0)
    m = float(np.sum(g.grid.quad_weights() * v))
    if m <= 0.0:
        raise AllZeroInput("noise wiped out all mass")
    v *= g.mass / m
    return Density(GridFn(g.grid, v), g.mass)


# ----------------------------------------------------------------------
# Fourier machinery (periodic convention only)


def _require_periodic(grid: Grid):
    if grid.convention != "periodic":
        raise ValueError("operation requires the periodic grid convention")


def fourier_modes(grid: Grid):
    """Angular-frequency arrays xi_k = 2*pi*k/L per axis, fft ordering."""
    _require_periodic(grid)
    return tuple(
        2.0 * np.pi * np.fft.fftfreq(grid.n, d=grid.h[i]) for i in range(grid.dim)
    )


def unitary_fft(f: GridFn) -> np.ndarray:
    """Discrete unitary Fourier coefficients fhat(xi_k); see module docstring."""
    _require_periodic(f.grid)
    d = f.grid.dim
    scale = f.grid.cell_volume() / (2.0 * np.pi) ** (d / 2.0)
    return np.fft.fftn(f.values) * scale


def unitary_ifft(grid: Grid, fhat: np.ndarray) -> np.ndarray:
    _require_periodic(grid)
    d = grid.dim
    scale = grid.cell_volume() / (2.0 * np.pi) ** (d / 2.0)
    return np.fft.ifftn(fhat / scale).real


def mode_measure(grid: Grid) -> float:
    """Spectral quadrature weight dxi**d = prod(2*pi/L)."""
    _require_periodic(grid)
    return float(np.prod([2.0 * np.pi / L for L in grid.lengths]))


@dataclass(frozen=True)
class SpectrumReport:
    """Energy per frequency shell: sum(energy * dxi) equals ||f||_L2^2."""

    xi: np.ndarray
    energy: np.ndarray
    dxi: float

    def total(self) -> float:
        return float(np.sum(self.energy) * self.dxi)


def spectrum_report(f: GridFn) -> SpectrumReport:
    """Shell-summed Fourier energy of f, Parseval-normalized.

    Shells are centered at integer multiples of dxi = 2*pi/L (square
    domains only in 2D); shell k collects every mode with |xi| rounding
    to k*dxi.
    """
    grid = f.grid
    _require_periodic(grid)
    if grid.dim == 2 and abs(grid.lengths[0] - grid.lengths[1]) > 1e-12:
        raise ValueError("2D spectrum shells need a square domain")
    fhat = unitary_fft(f)
    xi = fourier_modes(grid)
    dxi = 2.0 * np.pi / grid.lengths[0]
    if grid.dim == 1:
        absxi = np.abs(xi[0])
    else:
        xx, yy = np.meshgrid(xi[0], xi[1], indexing="ij")
        absxi = np.sqrt(xx**2 + yy**2)
    shell = np.rint(absxi / dxi).astype(int)
    nsh = int(shell.max()) + 1
    # energy density per shell so that sum(energy)*dxi = ||f||^2
    weight = mode_measure(grid) / dxi
    energy = np.bincount(shell.ravel(), weights=(np.abs(fhat) ** 2).ravel() * weight,
                         minlength=nsh)
    return SpectrumReport(xi=dxi * np.arange(nsh), energy=energy, dxi=dxi)


def high_frequency_fraction(f: GridFn, split: float = 0.5) -> float:
    """Fraction of spectral energy in shells at or above split * max |xi|."""
    rep = spectrum_report(f)
    tot = float(np.sum(rep.energy))
    if tot <= 0.0:
        return 0.0
    cut = split * rep.xi[-1]
    return float(np.sum(rep.energy[rep.xi >= cut]) / tot)


def reflect_to_periodic(f: GridFn) -> GridFn:
    """Even reflection of an endpoint-convention field onto a periodic grid.

    Removes the boundary jump so spectra of non-periodic fields can be
    compared without wrap-around leakage; periodic inputs pass through.
    """
    grid = f.grid
    if grid.convention == "periodic":
        return f
    v = f.values
    if grid.dim == 1:
        ext = np.concatenate([v, v[-2:0:-1]])
    else:
        ext = np.concatenate([v, v[-2:0:-1, :]], axis=0)
        ext = np.concatenate([ext, ext[:, -2:0:-1]], axis=1)
    n_ext = 2 * grid.n - 2
    pgrid = Grid(
        dim=grid.dim,
        lo=grid.lo,
        hi=tuple(a + 2.0 * (b - a) for a, b in zip(grid.lo, grid.hi)),
        n=n_ext,
        convention="periodic",
    )
    return GridFn(pgrid, ext)


# ----------------------------------------------------------------------
# CSV + JSON sidecar serialization


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def write_gridfn_csv(f: GridFn, path: str) -> None:
    """CSV with header x[,y],value plus a JSON sidecar <path>.json."""
    grid = f.grid
    with open(path, "w") as fh:
        if grid.dim == 1:
            fh.write("x,value\n")
            for x, v in zip(grid.axis(0), f.values):
                fh.write(f"{_fmt(x)},{_fmt(v)}\n")
        else:
            fh.write("x,y,value\n")
            xs, ys = grid.axis(0), grid.axis(1)
            for i, x in enumerate(xs):
                for j, y in enumerate(ys):
                    fh.write(f"{_fmt(x)},{_fmt(y)},{_fmt(f.values[i, j])}\n")
    meta = {
        "dim": grid.dim,
        "lo": list(grid.lo),
        "hi": list(grid.hi),
        "n": grid.n,
        "convention": grid.convention,
    }
    with open(path + ".json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_gridfn_csv(path: str) -> GridFn:
    with open(path + ".json") as fh:
        meta = json.load(fh)
    grid = Grid(
        dim=meta["dim"],
        lo=tuple(meta["lo"]),
        hi=tuple(meta["hi"]),
        n=meta["n"],
        convention=meta["convention"],
    )
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    vals = data[:, -1]
    if grid.dim == 2:
        vals = vals.reshape(grid.n, grid.n)
    return GridFn(grid, vals)
