"""Closed-form and grid-based quadratic transport in one and two dimensions.

The 2D optimal map is computed as the gradient of the convex potential
solving det(D^2 u) = f / g(grad u), via a damped fixed-point iteration of
Benamou-Froese type with spectral Poisson steps on a periodic grid.
Densities are expected to be strictly positive (floored) with their
support padded away from the boundary; the periodic wrap then carries
only floor-level mass and the boundary-value question does not arise.

The descent-direction kernel |x - T|^2 / 2 + psi uses the adjoint of the
linearized equation.  Writing a = g(T) adj(D^2 u) and using the
row-divergence identity sum_i d_i a_ij = det(D^2 u) (d_j g)(T) =: b_j,
the adjoint collapses to the divergence-form elliptic problem

    div(a grad psi) = div((x - T) f),

which expands to sum a_ij d2_ij psi + sum b_j d_j psi = div((x - T) f).
The 1D reduction of this form reproduces the explicit quantile-based
kernel exactly (a psi' = (x - T) f), which fixes the sign conventions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.ndimage import map_coordinates, spline_filter

from .errors import MassMismatch, NonSPD, NoConvergence, SingularAdjoint
from .grid import Density, Grid, GridFn, fourier_modes, mass

__all__ = [
    "AffineParams",
    "GaussianParams",
    "MomentPair",
    "MongeAmpereSolution",
    "w2_affine",
    "w2_gaussian",
    "solve_monge_ampere_2d",
    "solve_adjoint_ma_2d",
    "w2_gradient_2d",
    "weighted_hm1_surrogate",
    "hm1_surrogate_potential",
]


def _check_spd(M: np.ndarray, name: str) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise NonSPD(f"{name} must be a square matrix")
    if not np.allclose(M, M.T, atol=1e-12 * max(1.0, np.abs(M).max())):
        raise NonSPD(f"{name} must be symmetric")
    if np.linalg.eigvalsh(M).min() <= 0:
        raise NonSPD(f"{name} must be positive-definite")
    return M


def _spd_sqrt(M: np.ndarray) -> np.ndarray:
    lam, U = np.linalg.eigh(M)
    return (U * np.sqrt(np.maximum(lam, 0.0))) @ U.T


@dataclass(frozen=True)
class AffineParams:
    """Translation-dilation parameters: field = |S|^-1/2 phi(S^-1/2 (x - lam*xbar))."""

    Sigma: np.ndarray
    lam: float
    xbar: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "Sigma", _check_spd(self.Sigma, "Sigma"))
        object.__setattr__(self, "xbar", np.asarray(self.xbar, dtype=float))

    @property
    def shift(self) -> np.ndarray:
        return self.lam * self.xbar


@dataclass(frozen=True)
class GaussianParams:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "cov", _check_spd(self.cov, "cov"))
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))


@dataclass(frozen=True)
class MomentPair:
    """First moment vector and scalar second moment of a unit-mass template."""

    m1: np.ndarray
    m2: float

    def __post_init__(self):
        m1 = np.asarray(self.m1, dtype=float)
        object.__setattr__(self, "m1", m1)
        if self.m2 < float(m1 @ m1):
            raise ValueError("second moment below |first moment|^2")


def w2_affine(phi_moments: MomentPair, a: AffineParams, b: AffineParams) -> float:
    """Squared transport distance between two translate-dilates of one template.

    The dilation term uses the isotropic second-moment reduction
    ||sqrt(Sa) - sqrt(Sb)||_F^2 * M2 / d.
    """
    d = len(phi_moments.m1)
    delta = _spd_sqrt(a.Sigma) - _spd_sqrt(b.Sigma)
    v = a.shift - b.shift
    quad = float(np.sum(delta * delta)) * phi_moments.m2 / d
    return float(v @ v + 2.0 * v @ (delta @ phi_moments.m1) + quad)


def w2_gaussian(a: GaussianParams, b: GaussianParams) -> float:
    """|mu_a - mu_b|^2 + Tr(Sa + Sb - 2 (Sa^1/2 Sb Sa^1/2)^1/2)."""
    dmu = a.mean - b.mean
    ra = _spd_sqrt(a.cov)
    cross = _spd_sqrt(ra @ b.cov @ ra)
    tr = float(np.trace(a.cov) + np.trace(b.cov) - 2.0 * np.trace(cross))
    return float(dmu @ dmu) + max(tr, 0.0)


# ----------------------------------------------------------------------
# 2D Monge-Ampere solver


@dataclass(frozen=True)
class MongeAmpereSolution:
    """Convex potential, its gradient map, and solver diagnostics."""

    potential: GridFn
    map_x: GridFn
    map_y: GridFn
    residual: float
    cost: float
    iterations: int
    damping: float
    clamped_nodes: int
    converged: bool

    def diagnostics(self) -> dict:
        return {
            "iterations": self.iterations,
            "residual_linf": self.residual,
            "damping": self.damping,
            "clamped_nodes": self.clamped_nodes,
        }


def _check_ma_pair(f: Density, g: Density):
    if f.grid != g.grid:
        raise ValueError("densities live on different grids")
    grid = f.grid
    if grid.dim != 2 or grid.convention != "periodic":
        raise ValueError("2D periodic grid required")
    if abs(grid.lengths[0] - grid.lengths[1]) > 1e-12:
        raise ValueError("square domain required")
    if abs(f.mass - g.mass) > 1e-10:
        raise MassMismatch(f"masses differ: {f.mass} vs {g.mass}")
    if f.values.min() <= 0 or g.values.min() <= 0:
        raise ValueError("densities must be strictly positive (apply a floor)")


class _Spectral2D:
    """Cached FFT-side mode arrays for one periodic square grid."""

    def __init__(self, grid: Grid):
        kx, ky = fourier_modes(grid)
        self.kx, self.ky = np.meshgrid(kx, ky, indexing="ij")
        lap = -(self.kx**2 + self.ky**2)
        inv = np.zeros_like(lap)
        nz = lap != 0
        inv[nz] = 1.0 / lap[nz]
        self.inv_lap = inv

    def poisson(self, rhs: np.ndarray) -> np.ndarray:
        """Mean-zero solution of laplacian(v) = rhs - mean(rhs)."""
        rhat = np.fft.fft2(rhs)
        rhat[0, 0] = 0.0
        return np.fft.ifft2(rhat * self.inv_lap).real


def _interp_periodic(table: np.ndarray, grid: Grid, px: np.ndarray, py: np.ndarray,
                     prefiltered: bool) -> np.ndarray:
    ix = (px - grid.lo[0]) / grid.h[0]
    iy = (py - grid.lo[1]) / grid.h[1]
    return map_coordinates(table, [ix, iy], order=3, mode="grid-wrap",
                           prefilter=not prefiltered)


def solve_monge_ampere_2d(
    f: Density,
    g: Density,
    tol: float = 1e-6,
    max_iter: int = 5000,
    damping: float = 0.9,
) -> MongeAmpereSolution:
    """Damped fixed-point solve of det(D^2 u) g(grad u) = f with u convex.

    The potential is split as u = |x|^2/2 + v with v periodic mean-zero;
    each sweep updates the Laplacian through

        lap(u) <- sqrt(lap(u)^2 + 2 theta (f/g(grad u) - det D^2 u))

    and recovers v spectrally.  Hessian eigenvalues are clamped from
    below when evaluating the determinant so transient nonconvexity
    cannot feed back; at convergence on smooth positive pairs the clamp
    is inactive.  Raises NoConvergence (carrying the best iterate) when
    max_iter sweeps leave the residual above tol.
    """
    _check_ma_pair(f, g)
    grid = f.grid
    spec = _Spectral2D(grid)
    X, Y = grid.meshes()
    fv = f.values
    g_table = spline_filter(g.values, order=3, mode="grid-wrap")
    g_floor = 1e-3 * g.values.min()

    dkx, dky = 1j * spec.kx, 1j * spec.ky
    vhat = np.zeros((grid.n, grid.n), dtype=complex)
    clamp_eps = 1e-12

    best = None
    theta = damping
    it = 0
    for it in range(1, max_iter + 1):
        vx = np.fft.ifft2(dkx * vhat).real
        vy = np.fft.ifft2(dky * vhat).real
        vxx = np.fft.ifft2(dkx * dkx * vhat).real
        vyy = np.fft.ifft2(dky * dky * vhat).real
        vxy = np.fft.ifft2(dkx * dky * vhat).real
        uxx, uyy, uxy = 1.0 + vxx, 1.0 + vyy, vxy

        trace_half = 0.5 * (uxx + uyy)
        rad = np.sqrt(0.25 * (uxx - uyy) ** 2 + uxy**2)
        lam_lo = trace_half - rad
        lam_hi = trace_half + rad
        clamped = int(np.count_nonzero(lam_lo < clamp_eps))
        det = np.maximum(lam_lo, clamp_eps) * np.maximum(lam_hi, clamp_eps)

        tx, ty = X + vx, Y + vy
        gT = np.maximum(_interp_periodic(g_table, grid, tx, ty, True), g_floor)
        resid_field = det * gT - fv
        resid = float(np.abs(resid_field).max())

        if best is None or resid < best[0]:
            best = (resid, vhat.copy(), clamped, it)
        if resid < tol:
            break

        lap_u = uxx + uyy
        arg = lap_u**2 + 2.0 * theta * (fv / gT - det)
        lap_u_new = np.sqrt(np.maximum(arg, 0.0))
        vhat = np.fft.fft2(lap_u_new - 2.0)
        vhat[0, 0] = 0.0
        vhat *= spec.inv_lap

    resid, vhat, clamped, best_it = best
    vx = np.fft.ifft2(dkx * vhat).real
    vy = np.fft.ifft2(dky * vhat).real
    v = np.fft.ifft2(vhat).real
    u = 0.5 * (X**2 + Y**2) + v
    w = grid.quad_weights()
    u = u - np.sum(w * u) / np.sum(w)
    cost = float(np.sum(w * (vx**2 + vy**2) * fv))
    sol = MongeAmpereSolution(
        potential=GridFn(grid, u),
        map_x=GridFn(grid, X + vx),
        map_y=GridFn(grid, Y + vy),
        residual=resid,
        cost=cost,
        iterations=it,
        damping=theta,
        clamped_nodes=clamped,
        converged=resid < tol,
    )
    if not sol.converged:
        raise NoConvergence(
            f"residual {resid:.3e} above tol {tol:.3e} after {it} sweeps", sol
        )
    return sol


def _ma_fields(sol: MongeAmpereSolution, g: Density):
    """Recover Hessian, displacement and g-related fields from a solution."""
    grid = sol.potential.grid
    X, Y = grid.meshes()
    v = sol.potential.values - 0.5 * (X**2 + Y**2)
    vhat = np.fft.fft2(v - v.mean())
    spec = _Spectral2D(grid)
    dkx, dky = 1j * spec.kx, 1j * spec.ky
    uxx = 1.0 + np.fft.ifft2(dkx * dkx * vhat).real
    uyy = 1.0 + np.fft.ifft2(dky * dky * vhat).real
    uxy = np.fft.ifft2(dkx * dky * vhat).real
    tx, ty = sol.map_x.values, sol.map_y.values

    ghat = np.fft.fft2(g.values)
    gx = np.fft.ifft2(dkx * ghat).real
    gy = np.fft.ifft2(dky * ghat).real
    gT = np.maximum(
        _interp_periodic(spline_filter(g.values, order=3, mode="grid-wrap"),
                         grid, tx, ty, True),
        1e-3 * g.values.min(),
    )
    gxT = _interp_periodic(gx, grid, tx, ty, False)
    gyT = _interp_periodic(gy, grid, tx, ty, False)
    det = uxx * uyy - uxy**2
    return uxx, uyy, uxy, det, gT, gxT, gyT


def _roll_axis(idx_shift, n):
    base = np.arange(n)
    return (base + idx_shift) % n


def solve_adjoint_ma_2d(sol: MongeAmpereSolution, f: Density, g: Density) -> GridFn:
    """Mean-zero solution psi of the linearized-transport adjoint problem.

    Discretizes sum a_ij d2_ij psi + sum b_j d_j psi = div((x - T) f)
    (see module docstring for the sign conventions) with centered
    periodic differences and a direct sparse factorization, the mean
    pinned through a Lagrange multiplier.
    """
    grid = sol.potential.grid
    n = grid.n
    hx, hy = grid.h
    uxx, uyy, uxy, det, gT, gxT, gyT = _ma_fields(sol, g)

    a11 = gT * uyy
    a22 = gT * uxx
    a12 = -gT * uxy
    b1 = det * gxT
    b2 = det * gyT

    # rhs = div((x - T) f) with centered differences
    wx = (grid.meshes()[0] - sol.map_x.values) * f.values
    wy = (grid.meshes()[1] - sol.map_y.values) * f.values
    rhs = (np.roll(wx, -1, 0) - np.roll(wx, 1, 0)) / (2 * hx) + (
        np.roll(wy, -1, 1) - np.roll(wy, 1, 1)
    ) / (2 * hy)

    N = n * n
    idx = np.arange(N).reshape(n, n)

    def shifted(di, dj):
        return np.roll(np.roll(idx, -di, axis=0), -dj, axis=1)

    rows, cols, vals = [], [], []

    def add(coeff: np.ndarray, di: int, dj: int):
        rows.append(idx.ravel())
        cols.append(shifted(di, dj).ravel())
        vals.append(coeff.ravel())

    # a11 d2x
    add(-2.0 * a11 / hx**2, 0, 0)
    add(a11 / hx**2, 1, 0)
    add(a11 / hx**2, -1, 0)
    # a22 d2y
    add(-2.0 * a22 / hy**2, 0, 0)
    add(a22 / hy**2, 0, 1)
    add(a22 / hy**2, 0, -1)
    # 2 a12 dxy (centered cross stencil)
    c = 2.0 * a12 / (4.0 * hx * hy)
    add(c, 1, 1)
    add(-c, 1, -1)
    add(-c, -1, 1)
    add(c, -1, -1)
    # b terms, centered first differences
    add(b1 / (2 * hx), 1, 0)
    add(-b1 / (2 * hx), -1, 0)
    add(b2 / (2 * hy), 0, 1)
    add(-b2 / (2 * hy), 0, -1)

    L = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(N, N),
    ).tocsr()

    e = np.ones((N, 1))
    K = sp.bmat([[L, e], [e.T, None]], format="csc")
    try:
        lu = spla.splu(K)
        sol_vec = lu.solve(np.append(rhs.ravel(), 0.0))
    except RuntimeError as exc:
        raise SingularAdjoint(f"adjoint operator factorization failed: {exc}")
    psi = sol_vec[:N]
    check = L @ psi - rhs.ravel()
    rel = np.linalg.norm(check) / max(np.linalg.norm(rhs), 1e-300)
    if not np.all(np.isfinite(psi)) or rel > 1e-8:
        raise SingularAdjoint(
            f"adjoint solve residual {rel:.3e} exceeds 1e-8; operator near-singular"
        )
    psi = psi.reshape(n, n)
    return GridFn(grid, psi - psi.mean())


def w2_gradient_2d(
    f: Density, g: Density, tol: float = 1e-6, max_iter: int = 5000
) -> GridFn:
    """Descent-direction kernel |x - T|^2 / 2 + psi for half the squared
    2D transport distance; acts on zero-mean density perturbations."""
    sol = solve_monge_ampere_2d(f, g, tol=tol, max_iter=max_iter)
    psi = solve_adjoint_ma_2d(sol, f, g)
    X, Y = f.grid.meshes()
    half_sq = 0.5 * ((X - sol.map_x.values) ** 2 + (Y - sol.map_y.values) ** 2)
    return GridFn(f.grid, half_sq + psi.values)


# ----------------------------------------------------------------------
# Weighted homogeneous H^-1 surrogate


def _running_trapezoid(x: np.ndarray, q: np.ndarray) -> np.ndarray:
    out = np.empty_like(q)
    out[0] = 0.0
    np.cumsum(0.5 * (q[1:] + q[:-1]) * np.diff(x), out=out[1:])
    return out


def _surrogate_1d(f_vals, g: Density):
    x = g.grid.axis(0)
    r = f_vals - g.values
    R = _running_trapezoid(x, r)
    w = g.grid.quad_weights()
    value = float(np.sum(w * R**2 / g.values))
    phi = _running_trapezoid(x, -R / g.values)
    phi -= np.sum(w * phi) / np.sum(w)
    return value, GridFn(g.grid, phi)


_FACTOR_CACHE: dict = {}


def _surrogate_operator_2d(g: Density):
    """Factorized flux-form discretization of -div(g grad .), mean pinned."""
    key = (g.grid, g.values.tobytes())
    hit = _FACTOR_CACHE.get(key)
    if hit is not None:
        return hit
    grid = g.grid
    n = grid.n
    hx, hy = grid.h
    gv = g.values
    periodic = grid.convention == "periodic"
    N = n * n
    idx = np.arange(N).reshape(n, n)
    rows, cols, vals = [], [], []

    def add_face(i0, j0, i1, j1, coeff):
        a, b = idx[i0, j0], idx[i1, j1]
        rows.extend([a, b, a, b])
        cols.extend([a, b, b, a])
        vals.extend([coeff, coeff, -coeff, -coeff])

    # x-faces
    last = n if periodic else n - 1
    for i in range(last):
        i1 = (i + 1) % n
        gf = 0.5 * (gv[i, :] + gv[i1, :]) / hx**2
        for j in range(n):
            add_face(i, j, i1, j, gf[j])
    # y-faces
    for j in range(last):
        j1 = (j + 1) % n
        gf = 0.5 * (gv[:, j] + gv[:, j1]) / hy**2
        for i in range(n):
            add_face(i, j, i, j1, gf[i])

    A = sp.coo_matrix((vals, (rows, cols)), shape=(N, N)).tocsr()
    e = np.ones((N, 1))
    K = sp.bmat([[A, e], [e.T, None]], format="csc")
    lu = spla.splu(K)
    if len(_FACTOR_CACHE) > 4:
        _FACTOR_CACHE.clear()
    _FACTOR_CACHE[key] = lu
    return lu


def _surrogate_2d(f_vals, g: Density):
    grid = g.grid
    r = f_vals - g.values
    lu = _surrogate_operator_2d(g)
    sol = lu.solve(np.append(r.ravel(), 0.0))
    phi = sol[: grid.n * grid.n].reshape(grid.n, grid.n)
    w = grid.quad_weights()
    phi = phi - np.sum(w * phi) / np.sum(w)
    value = float(np.sum(w * phi * r))
    return value, GridFn(grid, phi)


def hm1_surrogate_potential(f: Density | GridFn, g: Density):
    """Solve -div(g grad phi) = f - g; return (norm value, mean-zero phi).

    The value is integral g |grad phi|^2 dx, evaluated through the exact
    discrete duality <phi, f - g>.  Boundaries are zero-flux on endpoint
    grids and wrap on periodic grids (1D uses the zero-flux running
    integral in both cases; residuals are compactly supported).
    """
    f_vals = f.values
    fm = mass(f if isinstance(f, GridFn) else f.base)
    if abs(fm - g.mass) > 1e-8 * max(1.0, abs(g.mass)):
        raise MassMismatch(f"masses differ: {fm} vs {g.mass}")
    if g.grid.dim == 1:
        return _surrogate_1d(f_vals, g)
    return _surrogate_2d(f_vals, g)


def weighted_hm1_surrogate(f: Density, g: Density) -> float:
    """Squared data-weighted H^-1 seminorm of f - g, the fast stand-in for
    the squared transport distance between nearby densities."""
    value, _ = hm1_surrogate_potential(f, g)
    return value
