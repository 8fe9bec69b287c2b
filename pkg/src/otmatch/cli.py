"""Config-driven experiment runner.

Every experiment is a pure function of (kind, params, seed) writing
plot-ready CSV/JSON artifacts plus a manifest with the config hash;
reruns with the same config and seed reproduce all CSV bytes.

Usage:  otmatch <kind> [--config file.json] [--out dir] [--seed N]
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .errors import OtmatchError
from .grid import (
    Density,
    Grid,
    GridFn,
    add_noise,
    NoiseSpec,
    high_frequency_fraction,
    make_density,
    mass,
    norm_l2,
    reflect_to_periodic,
    spectrum_report,
    write_gridfn_csv,
)
from .invert import (
    ConvolutionModel,
    FlowModel,
    InversionConfig,
    MismatchSpec,
    PATModel,
    evaluate_objective,
    gradient_wrt_model,
    run_inversion,
    weight_from_data,
)
from .models import DiffusionProblem, FlowParams, KernelSpec, convolve, flow_translate, project_axes
from .sobolev import resolution_study
from .transport1d import w2_1d
from .transport_nd import (
    AffineParams,
    GaussianParams,
    MomentPair,
    w2_affine,
    w2_gaussian,
    weighted_hm1_surrogate,
)

EXPERIMENT_KINDS = (
    "deconvolve",
    "invert-pde",
    "landscape",
    "resolution-study",
    "transport-1d",
    "w2-compute",
    "gaussian-expansion",
    "project-locate",
)


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    params: dict = field(default_factory=dict)
    out_dir: str = "out"
    seed: int = 0

    def __post_init__(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        _validate_params(self.kind, self.params)

    def sha256(self) -> str:
        blob = json.dumps(
            {"kind": self.kind, "params": self.params, "seed": self.seed},
            sort_keys=True,
            separators=(",", ":"),
        )
        return hashlib.sha256(blob.encode()).hexdigest()


_ALLOWED_KEYS = {
    "deconvolve": {
        "n", "halfwidth", "kernel", "kernel_ell", "noise_level", "metrics",
        "max_iter", "floor", "truth",
    },
    "invert-pde": {
        "dim", "n", "gamma", "kappa", "source", "noise_level", "metrics",
        "max_iter", "floor", "sigma_background", "initial_sigma",
    },
    "landscape": {"shift_max", "surface_steps", "diag_steps", "field_n",
                  "field_halfwidth"},
    "resolution-study": {"triples", "noise_levels", "trials", "n"},
    "transport-1d": {"n", "halfwidth", "bump_sigma", "true_shift", "scan_max",
                     "scan_steps"},
    "w2-compute": {"dim", "n", "halfwidth", "f", "g", "floor"},
    "gaussian-expansion": {"dim", "sigma_k", "sigma_m", "eps_list", "eps_ratio",
                           "offset", "grid_check", "n", "halfwidth"},
    "project-locate": {"n", "halfwidth", "bump_sigma", "true_shift", "scan_max",
                       "scan_steps"},
}


def _validate_params(kind: str, params: dict):
    allowed = _ALLOWED_KEYS[kind]
    unknown = set(params) - allowed
    if unknown:
        raise ValueError(f"{kind}: unknown parameter(s) {sorted(unknown)}")
    for key in ("n", "field_n", "surface_steps", "diag_steps", "scan_steps",
                "max_iter", "trials", "dim"):
        if key in params and (not isinstance(params[key], int) or params[key] <= 0):
            raise ValueError(f"{kind}: {key} must be a positive integer")
    for key in ("noise_level",):
        if key in params and not 0 <= params[key] < 1:
            raise ValueError(f"{kind}: {key} must lie in [0, 1)")


def _fmt(x) -> str:
    return f"{float(x):.17g}"


def _write_table(path: str, header: str, rows) -> None:
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) if not isinstance(v, str) else v for v in row))
            fh.write("\n")


def _write_json(path: str, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_spectrum(path: str, f: GridFn) -> None:
    rep = spectrum_report(reflect_to_periodic(f))
    _write_table(path, "xi,energy", zip(rep.xi, rep.energy))


# ----------------------------------------------------------------------
# Synthetic profiles


def two_bump_profile(grid: Grid) -> GridFn:
    """Smooth nonnegative two-bump truth for the 1D studies."""
    x = grid.axis(0)
    lo, hi = grid.lo[0], grid.hi[0]
    w = hi - lo
    c1, c2 = lo + 0.35 * w, lo + 0.68 * w
    s1, s2 = 0.06 * w, 0.075 * w
    vals = np.exp(-((x - c1) / s1) ** 2) + 0.8 * np.exp(-((x - c2) / s2) ** 2)
    return GridFn(grid, vals)


def gaussian_density(grid: Grid, mean, cov, floor: float = 0.0) -> Density:
    if grid.dim == 1:
        x = grid.axis(0)
        vals = np.exp(-0.5 * (x - float(mean)) ** 2 / float(cov))
    else:
        X, Y = grid.meshes()
        mx, my = mean
        cov = np.asarray(cov, dtype=float)
        if cov.ndim == 0:
            cov = np.diag([float(cov), float(cov)])
        P = np.linalg.inv(cov)
        dx, dy = X - mx, Y - my
        vals = np.exp(-0.5 * (P[0, 0] * dx**2 + 2 * P[0, 1] * dx * dy
                              + P[1, 1] * dy**2))
    return make_density(GridFn(grid, vals), 1.0, floor)


def _metric_spec(name: str, g: GridFn, floor: float) -> MismatchSpec:
    """Parse a metric name: l2, hs:<s>, dot_hs:<s>, hm1, weighted_hs:<s>,
    w2, surrogate."""
    if name == "l2":
        return MismatchSpec.l2()
    if name == "hm1":
        return MismatchSpec.dot_hs(-1.0)
    if name == "w2":
        return MismatchSpec.w2()
    if name == "surrogate":
        return MismatchSpec.surrogate()
    if ":" in name:
        base, sval = name.split(":", 1)
        s = float(sval)
        if base == "hs":
            return MismatchSpec.hs(s)
        if base == "dot_hs":
            return MismatchSpec.dot_hs(s)
        if base == "weighted_hs":
            return MismatchSpec.weighted_hs(s, weight_from_data(g, floor))
    raise ValueError(f"unknown metric {name!r}")


# ----------------------------------------------------------------------
# Experiment runners (each returns a list of artifact file names)


def _run_deconvolve(params: dict, out: str, seed: int) -> list:
    n = params.get("n", 512)
    halfwidth = params.get("halfwidth", 1.0)
    kern = KernelSpec(kind=params.get("kernel", "laplace"),
                      ell=params.get("kernel_ell", 1.0))
    noise_level = params.get("noise_level", 0.0)
    metrics = params.get("metrics", ["l2", "hm1", "w2"])
    max_iter = params.get("max_iter", 1000)
    floor = params.get("floor", 1e-10)

    grid = Grid(dim=1, lo=-halfwidth, hi=halfwidth, n=n, convention="endpoint")
    truth = two_bump_profile(grid)
    model = ConvolutionModel(kern)
    g_clean = model.forward(truth)
    g_den = make_density(g_clean, mass(g_clean), 0.0)
    g_noisy = add_noise(g_den, NoiseSpec(level=noise_level, seed=seed))
    g = g_noisy.base

    ones = GridFn(grid, np.ones(n))
    scale = mass(g) / mass(model.forward(ones))
    m0 = GridFn(grid, np.full(n, scale))

    artifacts = []
    write_gridfn_csv(truth, os.path.join(out, "truth.csv"))
    write_gridfn_csv(g_clean, os.path.join(out, "data_clean.csv"))
    write_gridfn_csv(g, os.path.join(out, "data_noisy.csv"))
    artifacts += ["truth.csv", "data_clean.csv", "data_noisy.csv"]

    summary = {"noise_level": noise_level, "metrics": {}}
    for name in metrics:
        spec = _metric_spec(name, g, floor)
        cfg = InversionConfig(max_iter=max_iter, clip_min=0.0, floor=floor)
        trace = run_inversion(model, spec, g, m0, cfg)
        mstar = trace.final_m
        tag = name.replace(":", "")
        write_gridfn_csv(mstar, os.path.join(out, f"recon_{tag}.csv"))
        trace.to_csv(os.path.join(out, f"trace_{tag}.csv"))
        _write_spectrum(os.path.join(out, f"spectrum_{tag}.csv"), mstar)
        artifacts += [f"recon_{tag}.csv", f"trace_{tag}.csv", f"spectrum_{tag}.csv"]
        err = norm_l2(GridFn(grid, mstar.values - truth.values))
        misfit = norm_l2(GridFn(grid, model.forward(mstar).values - g.values))
        summary["metrics"][name] = {
            "l2_error": err,
            "rel_data_misfit": misfit / max(norm_l2(g), 1e-300),
            "hf_fraction": high_frequency_fraction(reflect_to_periodic(mstar)),
            "iterations": len(trace.steps),
            "termination": trace.reason,
        }
    _write_json(os.path.join(out, "summary.json"), summary)
    artifacts.append("summary.json")
    return artifacts


def _pat_truth(grid: Grid, background: float) -> GridFn:
    if grid.dim == 1:
        x = grid.axis(0)
        w = grid.hi[0] - grid.lo[0]
        vals = background * (
            1.0
            + 1.5 * np.exp(-(((x - grid.lo[0]) / w - 0.35) / 0.12) ** 2)
            + 1.0 * np.exp(-(((x - grid.lo[0]) / w - 0.72) / 0.1) ** 2)
        )
    else:
        X, Y = grid.meshes()
        wx = grid.hi[0] - grid.lo[0]
        fx = (X - grid.lo[0]) / wx
        fy = (Y - grid.lo[1]) / (grid.hi[1] - grid.lo[1])
        vals = background * (
            1.0
            + 1.5 * np.exp(-(((fx - 0.35) / 0.15) ** 2 + ((fy - 0.4) / 0.15) ** 2))
            + 1.0 * np.exp(-(((fx - 0.7) / 0.12) ** 2 + ((fy - 0.65) / 0.12) ** 2))
        )
    return GridFn(grid, vals)


def _run_invert_pde(params: dict, out: str, seed: int) -> list:
    dim = params.get("dim", 1)
    n = params.get("n", 129 if dim == 1 else 33)
    gamma = params.get("gamma", 0.02)
    kappa = params.get("kappa", 1.0)
    source = params.get("source", 1.0)
    noise_level = params.get("noise_level", 0.12)
    metrics = params.get("metrics", ["l2", "surrogate"] + (["w2"] if dim == 1 else []))
    max_iter = params.get("max_iter", 300)
    floor = params.get("floor", 1e-10)
    background = params.get("sigma_background", 0.1)

    grid = Grid(dim=dim, lo=0.0, hi=1.0, n=n, convention="endpoint")
    sigma_true = _pat_truth(grid, background)
    template = DiffusionProblem(grid=grid, sigma=sigma_true, gamma=gamma,
                                kappa=kappa, source=source)
    model = PATModel(template)
    g_clean = model.forward(sigma_true)
    g_noisy = add_noise(make_density(g_clean, mass(g_clean), 0.0),
                        NoiseSpec(level=noise_level, seed=seed))
    g = g_noisy.base

    sigma0 = GridFn(grid, np.full_like(sigma_true.values,
                                       params.get("initial_sigma", background)))

    artifacts = []
    write_gridfn_csv(sigma_true, os.path.join(out, "sigma_true.csv"))
    write_gridfn_csv(g, os.path.join(out, "data_noisy.csv"))
    artifacts += ["sigma_true.csv", "data_noisy.csv"]

    summary = {"noise_level": noise_level, "metrics": {}, "gradient_slopes": {}}
    for name in metrics:
        spec = _metric_spec(name, g, floor)
        grad0 = gradient_wrt_model(model, spec, sigma0, g, floor=floor)
        tag = name.replace(":", "")
        _write_spectrum(os.path.join(out, f"gradient0_spectrum_{tag}.csv"), grad0)
        artifacts.append(f"gradient0_spectrum_{tag}.csv")
        summary["gradient_slopes"][name] = spectral_decay_slope(grad0)

        cfg = InversionConfig(max_iter=max_iter, clip_min=1e-4, floor=floor)
        trace = run_inversion(model, spec, g, sigma0, cfg)
        mstar = trace.final_m
        write_gridfn_csv(mstar, os.path.join(out, f"recon_{tag}.csv"))
        trace.to_csv(os.path.join(out, f"trace_{tag}.csv"))
        artifacts += [f"recon_{tag}.csv", f"trace_{tag}.csv"]
        err = norm_l2(GridFn(grid, mstar.values - sigma_true.values))
        summary["metrics"][name] = {
            "l2_error": err,
            "hf_fraction": high_frequency_fraction(reflect_to_periodic(mstar)),
            "iterations": len(trace.steps),
            "termination": trace.reason,
        }
    _write_json(os.path.join(out, "summary.json"), summary)
    artifacts.append("summary.json")
    return artifacts


def spectral_decay_slope(f: GridFn, skip_shells: int = 1) -> float:
    """Log-log slope of shell-averaged Fourier amplitude versus frequency."""
    rep = spectrum_report(reflect_to_periodic(f))
    xi = rep.xi[skip_shells:]
    en = rep.energy[skip_shells:]
    keep = en > 0
    amp = 0.5 * np.log(en[keep])
    return float(np.polyfit(np.log(xi[keep]), amp, 1)[0])


def _run_landscape(params: dict, out: str, seed: int) -> list:
    shift_max = params.get("shift_max", 10.0)
    surface_steps = params.get("surface_steps", 41)
    diag_steps = params.get("diag_steps", 161)
    field_n = params.get("field_n", 256)
    halfwidth = params.get("field_halfwidth", 16.0)

    grid = Grid(dim=2, lo=-halfwidth, hi=halfwidth, n=field_n,
                convention="periodic")
    X, Y = grid.meshes()
    centers = ((-2.0, -2.0), (2.0, 2.0))
    vals = np.zeros_like(X)
    for cx, cy in centers:
        vals += np.exp(-0.5 * ((X - cx) ** 2 + (Y - cy) ** 2))
    vals /= 4.0 * np.pi
    phi_hat = np.fft.fft2(vals)
    energy = np.abs(phi_hat) ** 2 * grid.cell_volume() ** 2 / (2 * np.pi) ** 2
    from .grid import fourier_modes, mode_measure

    kx, ky = fourier_modes(grid)
    KX, KY = np.meshgrid(kx, ky, indexing="ij")
    meas = mode_measure(grid)
    inv_k2 = np.zeros_like(KX)
    nz = KX**2 + KY**2 > 0
    inv_k2[nz] = 1.0 / (KX[nz] ** 2 + KY[nz] ** 2)

    # moments of the two-bump template (unit mass, isotropic unit bumps)
    m1 = np.mean(np.asarray(centers), axis=0)
    m2 = float(np.mean([cx**2 + cy**2 for cx, cy in centers]) + 2.0)
    moments = MomentPair(m1=m1, m2=m2)
    eye = np.eye(2)

    def norms_for_shifts(sx: np.ndarray, sy: np.ndarray):
        """Spectral sums of |exp(-i xi.s) - 1|^2 against L2 / H^-1 energies."""
        Cx = np.cos(np.outer(kx, sx))
        Sx = np.sin(np.outer(kx, sx))
        Cy = np.cos(np.outer(ky, sy))
        Sy = np.sin(np.outer(ky, sy))

        def bilinear(E):
            # sum_modes E * cos(kx sx + ky sy), batched over (sx, sy) pairs
            cc = np.einsum("is,ij,js->s", Cx, E, Cy)
            ss = np.einsum("is,ij,js->s", Sx, E, Sy)
            return cc - ss

        tot_l2 = energy.sum()
        tot_hm1 = (energy * inv_k2).sum()
        l2 = 2.0 * meas * (tot_l2 - bilinear(energy))
        hm1 = 2.0 * meas * (tot_hm1 - bilinear(energy * inv_k2))
        return l2, hm1

    artifacts = []
    # full surfaces
    s_axis = np.linspace(-shift_max, shift_max, surface_steps)
    SX, SY = np.meshgrid(s_axis, s_axis, indexing="ij")
    l2_surf, hm1_surf = norms_for_shifts(SX.ravel(), SY.ravel())
    w2_surf = np.array(
        [
            w2_affine(moments, AffineParams(eye, 1.0, (sx, sy)),
                      AffineParams(eye, 1.0, (0.0, 0.0)))
            for sx, sy in zip(SX.ravel(), SY.ravel())
        ]
    )
    rows = zip(SX.ravel(), SY.ravel(), l2_surf, hm1_surf, w2_surf)
    _write_table(os.path.join(out, "surfaces.csv"), "sx,sy,l2,hm1,w2sq", rows)
    artifacts.append("surfaces.csv")

    # diagonal sections
    t_axis = np.linspace(-shift_max, shift_max, diag_steps)
    l2_d, hm1_d = norms_for_shifts(t_axis, t_axis)
    w2_d = 2.0 * t_axis**2
    _write_table(os.path.join(out, "diagonal.csv"), "t,l2,hm1,w2sq",
                 zip(t_axis, l2_d, hm1_d, w2_d))
    artifacts.append("diagonal.csv")

    def strict_local_minima(v: np.ndarray) -> int:
        return int(np.sum((v[1:-1] < v[:-2]) & (v[1:-1] < v[2:])))

    diag = {
        "w2_min_second_difference": float(np.diff(w2_d, 2).min()),
        "l2_local_minima": strict_local_minima(l2_d),
        "hm1_local_minima": strict_local_minima(hm1_d),
    }
    _write_json(os.path.join(out, "diagnostics.json"), diag)
    artifacts.append("diagnostics.json")
    return artifacts


def _run_resolution_study(params: dict, out: str, seed: int) -> list:
    triples = params.get("triples", [[1.0, 1.0, 0.0], [1.0, 1.0, -1.0],
                                     [1.0, 1.0, 1.0]])
    noise_levels = params.get("noise_levels",
                              list(np.logspace(-4, -1, 7)))
    trials = params.get("trials", 20)
    n = params.get("n", 8192)
    artifacts = []
    summary = {}
    for alpha, beta, s in triples:
        study = resolution_study(alpha, beta, s, noise_levels, trials, seed, n=n)
        tag = f"a{alpha:g}_b{beta:g}_s{s:g}".replace("-", "m").replace(".", "p")
        study.to_csv(os.path.join(out, f"resolution_{tag}.csv"))
        study.to_json(os.path.join(out, f"resolution_{tag}.json"))
        artifacts += [f"resolution_{tag}.csv", f"resolution_{tag}.json"]
        summary[tag] = {"slope": study.slope, "theory": study.theory_slope,
                        "r2": study.r2}
    _write_json(os.path.join(out, "summary.json"), summary)
    artifacts.append("summary.json")
    return artifacts


def _run_transport_1d(params: dict, out: str, seed: int) -> list:
    n = params.get("n", 2048)
    halfwidth = params.get("halfwidth", 8.0)
    bump_sigma = params.get("bump_sigma", 0.5)
    true_shift = params.get("true_shift", 1.5)
    scan_max = params.get("scan_max", 4.0)
    scan_steps = params.get("scan_steps", 81)

    grid = Grid(dim=1, lo=-halfwidth, hi=halfwidth, n=n, convention="periodic")
    phi = gaussian_density(grid, 0.0, bump_sigma**2, floor=1e-12)
    target = flow_translate(phi, FlowParams(v=[1.0], lam=true_shift))

    rows = []
    for lam in np.linspace(-scan_max, scan_max, scan_steps):
        moved = flow_translate(phi, FlowParams(v=[1.0], lam=lam))
        w2sq = w2_1d(moved, target)
        l2sq = norm_l2(GridFn(grid, moved.values - target.values)) ** 2
        rows.append((lam, w2sq, (lam - true_shift) ** 2, l2sq))
    _write_table(os.path.join(out, "scan.csv"), "lambda,w2sq,closed_form,l2sq", rows)

    model = FlowModel(phi)
    cfg = InversionConfig(max_iter=60, grad_tol=1e-12)
    trace = run_inversion(model, MismatchSpec.w2(), target.base,
                          np.array([-1.0]), cfg)
    _write_json(
        os.path.join(out, "recovery.json"),
        {
            "true_shift": true_shift,
            "recovered_shift": float(np.atleast_1d(trace.final_m)[0]),
            "iterations": len(trace.steps),
            "termination": trace.reason,
        },
    )
    return ["scan.csv", "recovery.json"]


def _density_from_spec(grid: Grid, spec: dict, floor: float) -> Density:
    kind = spec.get("kind", "gaussian")
    if kind == "gaussian":
        return gaussian_density(grid, spec.get("mean", 0.0), spec.get("cov", 1.0),
                                floor)
    if kind == "two_bump":
        return make_density(two_bump_profile(grid), 1.0, floor)
    raise ValueError(f"unknown density kind {kind!r}")


def _run_w2_compute(params: dict, out: str, seed: int) -> list:
    dim = params.get("dim", 1)
    n = params.get("n", 1024 if dim == 1 else 64)
    halfwidth = params.get("halfwidth", 8.0 if dim == 1 else 4.0)
    floor = params.get("floor", 1e-10)
    grid = Grid(dim=dim, lo=-halfwidth, hi=halfwidth, n=n, convention="periodic")
    f = _density_from_spec(grid, params.get("f", {"kind": "gaussian", "mean": 0.0}),
                           floor)
    gspec = params.get("g", {"kind": "gaussian",
                             "mean": 1.0 if dim == 1 else [1.0, 0.5]})
    g = _density_from_spec(grid, gspec, floor)
    result = {"surrogate_sq": weighted_hm1_surrogate(f, g)}
    if dim == 1:
        result["w2_sq"] = w2_1d(f, g)
    else:
        from .transport_nd import solve_monge_ampere_2d

        sol = solve_monge_ampere_2d(f, g, tol=params.get("tol", 1e-6))
        result["w2_sq"] = sol.cost
        result["solver"] = sol.diagnostics()
    fs = params.get("f", {})
    if fs.get("kind", "gaussian") == "gaussian" and gspec.get("kind",
                                                              "gaussian") == "gaussian":
        mean_f = np.atleast_1d(fs.get("mean", 0.0))
        mean_g = np.atleast_1d(gspec.get("mean", 1.0))
        cov_f = np.atleast_2d(fs.get("cov", 1.0)) * (np.eye(dim) if np.ndim(
            fs.get("cov", 1.0)) == 0 else 1.0)
        cov_g = np.atleast_2d(gspec.get("cov", 1.0)) * (np.eye(dim) if np.ndim(
            gspec.get("cov", 1.0)) == 0 else 1.0)
        result["gaussian_closed_form"] = w2_gaussian(
            GaussianParams(mean_f, cov_f), GaussianParams(mean_g, cov_g)
        )
    _write_json(os.path.join(out, "result.json"), result)
    return ["result.json"]


def truncated_expansion(sigma_k: np.ndarray, sigma_m: np.ndarray,
                        eps_f: float, eps_g: float, offset_sq: float) -> float:
    """Small-source expansion of the squared distance between two blurred
    sources of equal shape: |dx|^2 + (1/4) (eps_f^2 - eps_g^2)^2
    Tr(S_K (S_K^-1 S_m)' (S_K^-1 S_m)); the remainder is sixth order."""
    M = np.linalg.solve(sigma_k, sigma_m)
    quad = 0.25 * (eps_f**2 - eps_g**2) ** 2 * float(np.trace(sigma_k @ M.T @ M))
    return offset_sq + quad


def _run_gaussian_expansion(params: dict, out: str, seed: int) -> list:
    dim = params.get("dim", 2)
    sigma_k = np.atleast_2d(params.get("sigma_k", np.eye(dim).tolist()))
    sigma_m = np.atleast_2d(params.get("sigma_m", (0.7 * np.eye(dim)).tolist()))
    eps_list = params.get("eps_list", [0.05, 0.1, 0.2])
    ratio = params.get("eps_ratio", 2.0)
    offset = np.asarray(params.get("offset", [0.3] + [0.0] * (dim - 1)), dtype=float)
    offset_sq = float(offset @ offset)

    rows = []
    for eps in eps_list:
        eps_g, eps_f = float(eps), float(ratio * eps)
        cov_f = sigma_k + eps_f**2 * sigma_m
        cov_g = sigma_k + eps_g**2 * sigma_m
        w2 = w2_gaussian(GaussianParams(offset, cov_f),
                         GaussianParams(np.zeros(dim), cov_g))
        trunc = truncated_expansion(sigma_k, sigma_m, eps_f, eps_g, offset_sq)
        rows.append((eps, w2, trunc, abs(w2 - trunc)))
    _write_table(os.path.join(out, "expansion.csv"),
                 "eps,w2sq,truncation,remainder", rows)
    eps_arr = np.array([r[0] for r in rows])
    rem = np.array([r[3] for r in rows])
    slope = float(np.polyfit(np.log(eps_arr), np.log(np.maximum(rem, 1e-300)), 1)[0])
    result = {"remainder_slope": slope, "theory_slope": 6.0}

    if params.get("grid_check", dim == 1):
        n = params.get("n", 4096)
        halfwidth = params.get("halfwidth", 10.0)
        grid = Grid(dim=1, lo=-halfwidth, hi=halfwidth, n=n, convention="periodic")
        checks = []
        for eps in eps_list:
            eps_g, eps_f = float(eps), float(ratio * eps)
            var_f = float(sigma_k[0, 0] + eps_f**2 * sigma_m[0, 0])
            var_g = float(sigma_k[0, 0] + eps_g**2 * sigma_m[0, 0])
            f = gaussian_density(grid, float(offset[0]), var_f, floor=1e-13)
            g = gaussian_density(grid, 0.0, var_g, floor=1e-13)
            checks.append((eps, w2_1d(f, g)))
        _write_table(os.path.join(out, "grid_check.csv"), "eps,w2sq_grid", checks)
        result["grid_check"] = "grid_check.csv"
    _write_json(os.path.join(out, "expansion.json"), result)
    return ["expansion.csv", "expansion.json"]


def _run_project_locate(params: dict, out: str, seed: int) -> list:
    n = params.get("n", 256)
    halfwidth = params.get("halfwidth", 8.0)
    bump_sigma = params.get("bump_sigma", 0.6)
    shift = np.asarray(params.get("true_shift", [1.2, -0.7]), dtype=float)
    scan_max = params.get("scan_max", 3.0)
    scan_steps = params.get("scan_steps", 41)

    grid = Grid(dim=2, lo=-halfwidth, hi=halfwidth, n=n, convention="periodic")
    phi = gaussian_density(grid, (0.0, 0.0), bump_sigma**2, floor=1e-12)
    target = flow_translate(phi, FlowParams(v=shift, lam=1.0))
    proj_t = [project_axes(target, 0), project_axes(target, 1)]

    rows = []
    for a in np.linspace(-scan_max, scan_max, scan_steps):
        moved = flow_translate(phi, FlowParams(v=[1.0, 0.0], lam=a))
        wa = w2_1d(project_axes(moved, 0), proj_t[0])
        wb = w2_1d(project_axes(moved, 1), proj_t[1])
        rows.append((a, wa, wb, wa + wb))
    _write_table(os.path.join(out, "axis0_scan.csv"),
                 "shift,w2sq_axis0,w2sq_axis1,objective", rows)

    # direct localization: projected barycenter displacement per axis
    w = proj_t[0].grid.quad_weights()
    x = proj_t[0].grid.axis(0)
    recovered = []
    for ax in range(2):
        p_phi = project_axes(phi, ax)
        recovered.append(
            float(np.sum(w * x * proj_t[ax].values) - np.sum(w * x * p_phi.values))
        )
    _write_json(
        os.path.join(out, "localization.json"),
        {"true_shift": shift.tolist(), "recovered_shift": recovered},
    )
    return ["axis0_scan.csv", "localization.json"]


_RUNNERS = {
    "deconvolve": _run_deconvolve,
    "invert-pde": _run_invert_pde,
    "landscape": _run_landscape,
    "resolution-study": _run_resolution_study,
    "transport-1d": _run_transport_1d,
    "w2-compute": _run_w2_compute,
    "gaussian-expansion": _run_gaussian_expansion,
    "project-locate": _run_project_locate,
}


def run_experiment(config: ExperimentConfig) -> dict:
    """Run one experiment; write artifacts and manifest.json under out_dir."""
    import scipy

    os.makedirs(config.out_dir, exist_ok=True)
    manifest = {
        "kind": config.kind,
        "seed": config.seed,
        "params": config.params,
        "config_sha256": config.sha256(),
        "versions": {
            "otmatch": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "artifacts": [],
        "status": "ok",
    }
    try:
        manifest["artifacts"] = _RUNNERS[config.kind](
            config.params, config.out_dir, config.seed
        )
    except (OtmatchError, ValueError) as exc:
        manifest["status"] = "error"
        manifest["error"] = f"{type(exc).__name__}: {exc}"
    _write_json(os.path.join(config.out_dir, "manifest.json"), manifest)
    return manifest


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="otmatch",
        description="Inverse data-matching experiments with interchangeable "
        "discrepancy metrics.",
    )
    sub = parser.add_subparsers(dest="kind", required=True)
    for kind in EXPERIMENT_KINDS:
        p = sub.add_parser(kind, help=f"run the {kind} experiment")
        p.add_argument("--config", default=None, help="JSON parameter file")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="rng seed")
    args = parser.parse_args(argv)

    params, out_dir, seed = {}, f"out_{args.kind}", 0
    if args.config:
        with open(args.config) as fh:
            loaded = json.load(fh)
        params = loaded.get("params", {k: v for k, v in loaded.items()
                                       if k not in ("out_dir", "seed", "kind")})
        out_dir = loaded.get("out_dir", out_dir)
        seed = loaded.get("seed", seed)
    if args.out is not None:
        out_dir = args.out
    if args.seed is not None:
        seed = args.seed

    try:
        config = ExperimentConfig(kind=args.kind, params=params,
                                  out_dir=out_dir, seed=seed)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    manifest = run_experiment(config)
    print(os.path.join(out_dir, "manifest.json"))
    if manifest["status"] != "ok":
        print(f"error: {manifest.get('error')}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
