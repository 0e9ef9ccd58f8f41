"""Config-driven FEM sweeps: quasi-optimality, pollution, relative error and eta.

Every sweep point builds a curved mesh of the truncated domain, solves the
Galerkin problem with the exact DtN boundary condition and compares against
the modal oracle in the H^1_k norm.  Records are sorted by (k, h, p) before
they are written so that output files do not depend on scheduling.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Literal

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.optimize import least_squares

from . import exact_oracle as oracle
from . import fem
from .dtn import DtnOperator
from .errors import ConfigurationError, ContractError, SolverError
from .fem.assembly import assemble_stiffness_mass

log = logging.getLogger(__name__)

ABOVE_THRESHOLD_HK = 0.5
RATIO_FLOOR = 1.0 - 1e-6


# ---------------------------------------------------------------- configuration


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class HRule(_Strict):
    """Mesh-size rule.  ``value`` is the constant held fixed along the k-grid.

    fixed:   h = value
    hk:      h k = value
    hpkp1:   h^p k^(p+1) = value
    hpkp1M:  h^p k^(p+1+M) = value
    """

    kind: Literal["fixed", "hk", "hpkp1", "hpkp1M"]
    value: float = Field(gt=0)
    M: float = 0.0

    def h(self, k, p):
        if self.kind == "fixed":
            return self.value
        if self.kind == "hk":
            return self.value / k
        M = math.ceil(self.M * 10 - 1e-9) / 10 if self.kind == "hpkp1M" else 0.0
        return (self.value / k ** (p + 1 + M)) ** (1.0 / p)


class PRule(_Strict):
    kind: Literal["fixed", "log"] = "fixed"
    p: int = Field(default=1, ge=1, le=10)
    C5: float = Field(default=1.5, gt=0)

    def degree(self, k):
        if self.kind == "fixed":
            return self.p
        return max(1, math.ceil(self.C5 * math.log(k)))


class RhsSpec(_Strict):
    kind: Literal["planewave", "bump"] = "planewave"
    direction: tuple[float, float] = (1.0, 0.0)


class ExperimentConfig(_Strict):
    problem: Literal["dirichlet_disk", "transmission_disk"] = "dirichlet_disk"
    R0: float = Field(default=0.25, gt=0)
    R: float = Field(default=0.375, gt=0)
    A: float = Field(default=1.0, gt=0)
    c: float = Field(default=1.0, gt=0)
    beta: float = Field(default=1.0, gt=0)
    k_grid: list[float] = Field(min_length=1)
    h_rule: HRule
    p_rule: PRule = PRule()
    h_factors: list[float] = Field(default=[1.0], min_length=1)
    rhs: RhsSpec = RhsSpec()
    C4: float = Field(default=0.5, gt=0)
    out: str | None = None
    seed: int = 0
    eta_samples: int = Field(default=0, ge=0)
    eta_power_steps: int = Field(default=5, ge=0)

    @model_validator(mode="after")
    def _consistent(self):
        if self.R0 >= self.R:
            raise ValueError("need R0 < R")
        if any(k <= 0 for k in self.k_grid):
            raise ValueError("wavenumbers must be positive")
        if any(f <= 0 for f in self.h_factors):
            raise ValueError("h factors must be positive")
        if self.problem == "dirichlet_disk" and (self.A != 1.0 or self.c != 1.0):
            raise ValueError("the oracle covers the homogeneous exterior only (A = c = 1)")
        if 0 < self.eta_samples < 16:
            raise ValueError("eta_samples must be 0 (off) or at least 16")
        return self


# ---------------------------------------------------------------- problem


@dataclass
class Problem:
    """Geometry, coefficients, oracle and data for one configuration."""

    config: ExperimentConfig

    @property
    def geometry(self):
        cfg = self.config
        if cfg.problem == "dirichlet_disk":
            return {"kind": "dirichlet", "R0": cfg.R0}
        return {"kind": "transmission", "R0": cfg.R0, "c": cfg.c, "beta": cfg.beta}

    def coefficients(self):
        cfg = self.config
        if cfg.problem == "dirichlet_disk":
            return fem.Coefficients.dirichlet(cfg.A, cfg.c)
        return fem.Coefficients.transmission(cfg.c, cfg.beta)

    def space(self, h, p):
        cfg = self.config
        if h >= cfg.R - cfg.R0:
            raise ConfigurationError("h = %g does not fit in the annulus" % h)
        mesh = fem.build_mesh(cfg.problem.replace("transmission", "penetrable"), cfg.R0, cfg.R, h)
        return fem.FeSpace(mesh, p, dirichlet=("inner",) if cfg.problem == "dirichlet_disk" else ())

    def dtn(self, k):
        return DtnOperator(k, self.config.R)

    def _bump_support(self):
        cfg = self.config
        lo = 0.0 if cfg.problem == "transmission_disk" else cfg.R0
        return lo + 0.1 * (cfg.R - lo), cfg.R - 0.1 * (cfg.R - lo)

    def data(self, k):
        a, b = self._bump_support()
        d = np.asarray(self.config.rhs.direction, float)
        d = d / np.linalg.norm(d)

        def f(x):
            r = np.hypot(x[..., 0], x[..., 1])
            return oracle.bump(r, a, b) * np.exp(1j * k * (x @ d))

        return f

    def system(self, space, k, rhs=True):
        spec = None
        if rhs:
            if self.config.rhs.kind == "planewave":
                spec = ("planewave", self.config.rhs.direction)
            else:
                spec = ("volume", self.data(k))
        return fem.assemble(space, self.coefficients(), k, self.dtn(k), spec)

    def exact(self, k):
        """Callable x -> (u, grad u) for the configured data."""
        cfg = self.config
        if cfg.rhs.kind == "planewave":
            if cfg.problem == "dirichlet_disk":
                sol = oracle.mie_dirichlet(k, cfg.R0, cfg.rhs.direction)
            else:
                sol = oracle.mie_transmission(k, cfg.R0, cfg.c, cfg.beta, cfg.rhs.direction)
        else:
            if cfg.problem != "dirichlet_disk":
                raise ConfigurationError("volume data oracle is available for the Dirichlet disk")
            sol = oracle.solve_volume(k, self.geometry, self.data(k), self._bump_support())
        return sol

    def continuity_dtn(self, k):
        """Sharp modal C_DtN for the H^1_k norm on the computational domain."""
        cfg = self.config
        inner = cfg.R0 if cfg.problem == "dirichlet_disk" else None
        return self.dtn(k).continuity_constant(inner_radius=inner)

    def constants(self, space, k):
        """(C_qo, Schatz threshold on k eta, C_DtN)."""
        amin, amax, nmax = self.coefficients().bounds(space.mesh)
        cdtn = self.continuity_dtn(k)
        ccont = max(amax, nmax) + cdtn
        c_qo = 2 * (max(amax, nmax) + cdtn) / amin
        schatz = math.sqrt(amin / (2 * (nmax + amin))) / ccont
        return c_qo, schatz, cdtn


# ---------------------------------------------------------------- eta


@dataclass(frozen=True)
class EtaEstimate:
    value: float
    spread: float
    samples: tuple
    power: tuple


def prolongation_matrix(coarse, fine):
    """Sparse embedding of a degree-q space into a degree-p space on the same mesh."""
    if coarse.mesh is not fine.mesh:
        raise ContractError("prolongation needs both spaces on the same mesh")
    phi, _ = coarse.element.eval(fine.element.nodes)
    phi = np.where(np.abs(phi) < 1e-13, 0.0, phi)
    nt, nf = fine.l2g.shape
    nc = coarse.l2g.shape[1]
    rows = np.broadcast_to(fine.l2g[:, :, None], (nt, nf, nc)).ravel()
    cols = np.broadcast_to(coarse.l2g[:, None, :], (nt, nf, nc)).ravel()
    vals = np.broadcast_to(phi, (nt, nf, nc)).ravel()
    keep = vals != 0
    rows, cols, vals = rows[keep], cols[keep], vals[keep]
    # shared nodes see the same value from every element; keep one copy
    _, first = np.unique(rows.astype(np.int64) * coarse.ndof + cols, return_index=True)
    return sp.csr_matrix((vals[first], (rows[first], cols[first])),
                         shape=(fine.ndof, coarse.ndof))


def _band_limited(rng, k, n_waves=8):
    kk = k * np.sqrt(rng.uniform(0, 1, n_waves))
    ang = rng.uniform(0, 2 * np.pi, n_waves)
    vec = kk[:, None] * np.column_stack([np.cos(ang), np.sin(ang)])
    amp = rng.standard_normal(n_waves) + 1j * rng.standard_normal(n_waves)
    return lambda x: np.exp(1j * (x @ vec.T)) @ amp


def estimate_eta(space, problem, k, n_samples=16, rng=None, reference=None, power_steps=5):
    """Sampled lower bound for eta(V_N) = sup_f min_v ||S*f - v||_{H^1_k} / ||f||.

    S*f is computed in ``reference`` (default: degree p+1 on the same mesh)
    and projected onto ``space`` in the H^1_k inner product.  After the random
    band-limited samples, ``power_steps`` power iterations on the composed
    operator (projection complement after S*) refine the worst direction.
    """
    if n_samples < 16:
        raise ContractError("eta needs at least 16 samples")
    rng = np.random.default_rng(rng)
    ref = reference or fem.FeSpace(space.mesh, space.p + 1, space.dirichlet)
    system = problem.system(ref, k, rhs=False)
    unit = fem.Coefficients({"default": 1.0}, {"default": 1.0})
    K1, M1 = assemble_stiffness_mass(ref, unit, check=False)
    G = (K1 + k * k * M1).tocsr()
    P = prolongation_matrix(space, ref) if ref is not space else sp.identity(ref.ndof, format="csr")
    cf = space.free
    Gc = (P.T @ G @ P).tocsc()[cf][:, cf]
    try:
        lu = spla.splu(Gc.tocsc())
    except RuntimeError as exc:
        raise SolverError("singular projection Gram matrix: %s" % exc) from exc

    def complement(f):
        w = fem.adjoint_solve(system, (M1 @ f)[ref.free])
        b = (P.T @ (G @ w))[cf]
        c = np.zeros(space.ndof, complex)
        c[cf] = lu.solve(b.real) + 1j * lu.solve(b.imag)
        r = w - P @ c
        nf = math.sqrt(max(np.real(np.vdot(f, M1 @ f)), 0.0))
        nr = math.sqrt(max(np.real(np.vdot(r, G @ r)), 0.0))
        return r, nr / nf

    x = ref.node_points()
    samples, vectors = [], []
    for _ in range(n_samples):
        f = _band_limited(rng, k)(x)
        _, q = complement(f)
        samples.append(q)
        vectors.append(f)
    f = vectors[int(np.argmax(samples))]
    power = []
    for _ in range(power_steps):
        r, q = complement(f)
        power.append(q)
        g = np.zeros(ref.ndof, complex)
        g[ref.free] = system.solve_free((G @ r)[ref.free])
        f = g / math.sqrt(max(np.real(np.vdot(g, M1 @ g)), 1e-300))
    if power_steps:
        power.append(complement(f)[1])
    value = max(samples + power)
    return EtaEstimate(float(value), float(np.std(samples)), tuple(samples), tuple(power))


# ---------------------------------------------------------------- records


@dataclass
class ExperimentRecord:
    k: float
    h: float
    p: int
    ndof: int
    err_h1k: float
    best_h1k: float
    ratio: float
    rel_err: float
    eta: float
    eta_spread: float
    C_qo: float
    C_DtN: float
    schatz: bool
    failed: bool
    wall_time: float = 0.0


# wall time is machine dependent and goes to summary.json, not the CSV
CSV_FIELDS = tuple(f.name for f in fields(ExperimentRecord) if f.name != "wall_time")


class _CachedExact:
    """Oracle values keyed by quadrature chunk; the error, projection and
    best-approximation passes all visit the same points."""

    def __init__(self, sol):
        self.sol = sol
        self.cache = {}

    def __call__(self, x):
        flat = x.reshape(-1)
        key = (x.shape, flat[:8].tobytes(), flat[-8:].tobytes())
        if key not in self.cache:
            self.cache[key] = self.sol.evaluate(x, gradient=True)
        return self.cache[key]


def run_point(config, k, h, p, with_errors=True, seed=None):
    """Solve, measure and (optionally) estimate eta at one grid point."""
    t0 = time.perf_counter()
    problem = Problem(config)
    nan = float("nan")
    space = problem.space(h, p)
    c_qo, schatz_bound, cdtn = problem.constants(space, k)
    err = best = ratio = rel = nan
    failed = False
    if with_errors:
        try:
            system = problem.system(space, k)
            u = fem.galerkin_solve(system)
        except SolverError as exc:
            log.warning("k=%g h=%g p=%d: %s", k, h, p, exc)
            failed = True
        if not failed:
            exact = _CachedExact(problem.exact(k))
            err, ref = fem.norms_against(space, u.coeffs, exact, k)
            proj = fem.H1kProjector(space, k)
            best, _ = fem.norms_against(space, proj.project_function(exact), exact, k)
            ratio = err / best if best > 0 else nan
            rel = err / ref
    eta = spread = nan
    if config.eta_samples and not failed:
        est = estimate_eta(space, problem, k, config.eta_samples, rng=seed,
                           power_steps=config.eta_power_steps)
        eta, spread = est.value, est.spread
    schatz = bool(np.isfinite(eta) and k * eta <= schatz_bound)
    return ExperimentRecord(float(k), float(space.mesh.h), int(p), int(space.ndof), err, best,
                            ratio, rel, eta, spread, c_qo, cdtn, schatz, failed,
                            time.perf_counter() - t0)


def grid_points(config):
    """(k, h, p, seed) for every point of the sweep, in a fixed order."""
    pts = []
    seeds = np.random.SeedSequence(config.seed).spawn(len(config.k_grid) * len(config.h_factors))
    i = 0
    for k in config.k_grid:
        p = config.p_rule.degree(k)
        for fac in config.h_factors:
            pts.append((float(k), config.h_rule.h(k, p) * fac, p, seeds[i]))
            i += 1
    return pts


def _run_star(args):
    config, k, h, p, with_errors, seed = args
    return run_point(config, k, h, p, with_errors, seed)


def run_sweep(config, jobs=1, with_errors=True):
    """Records for every grid point, sorted by (k, h, p)."""
    tasks = [(config, k, h, p, with_errors, s) for k, h, p, s in grid_points(config)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            recs = list(pool.map(_run_star, tasks))
    else:
        recs = [_run_star(t) for t in tasks]
    for r in recs:
        log.info("k=%g h=%.4g p=%d ndof=%d rel=%.3e ratio=%.6f", r.k, r.h, r.p, r.ndof,
                 r.rel_err, r.ratio)
    return sorted(recs, key=lambda r: (r.k, r.h, r.p))


# ---------------------------------------------------------------- fits


def loglog_slope(x, y):
    x, y = np.asarray(x, float), np.asarray(y, float)
    ok = np.isfinite(y) & (y > 0)
    if ok.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(x[ok]), np.log(y[ok]), 1)[0])


def _above_threshold(config, rec):
    return (rec.h * rec.k <= config.C4 + 1e-12
            and rec.p >= config.p_rule.C5 * math.log(rec.k) - 1e-12)


def threshold_monotone(records):
    """Once the Schatz condition holds at (k, p), it holds for every finer h."""
    groups = {}
    for r in records:
        if np.isfinite(r.eta):
            groups.setdefault((r.k, r.p), []).append(r)
    for recs in groups.values():
        recs = sorted(recs, key=lambda r: -r.h)
        seen = False
        for r in recs:
            if seen and not r.schatz:
                return False
            seen = seen or r.schatz
    return True


def summarize_quasiopt(config, records):
    done = [r for r in records if not r.failed]
    above = [r for r in done if _above_threshold(config, r)]
    checks = {
        "ratio_at_least_one": all(r.ratio >= RATIO_FLOOR for r in done),
        "ratio_below_Cqo_above_threshold": bool(above) and all(r.ratio <= r.C_qo for r in above),
        "threshold_monotone": threshold_monotone(records),
    }
    return {
        "n_points": len(records),
        "n_failed": len(records) - len(done),
        "n_above_threshold": len(above),
        "max_ratio": max((r.ratio for r in done), default=float("nan")),
        "checks": checks,
    }


def run_quasiopt_sweep(config, jobs=1):
    records = run_sweep(config, jobs)
    return records, summarize_quasiopt(config, records)


def bounded_rule(config):
    """The h^2 k^3 = const companion of an hk = const, p = 1 configuration.

    For p = 1 this is h^p k^(p+1+M) = const with M = -1/2, matched to the
    fixed-hk mesh at the smallest k.
    """
    k0 = min(config.k_grid)
    h0 = config.h_rule.h(k0, 1)
    rule = HRule(kind="hpkp1M", value=h0 * k0 ** 1.5, M=-0.5)
    return config.model_copy(update={"h_rule": rule})


def run_pollution_demo(config, jobs=1):
    """Relative error at fixed hk (pollution) and along h^2 k^3 = const."""
    if config.h_rule.kind != "hk" or config.p_rule.kind != "fixed" or config.p_rule.p != 1:
        raise ConfigurationError("the pollution demo needs h_rule hk and p = 1")
    if len(config.k_grid) < 3 or max(config.k_grid) < 4 * min(config.k_grid):
        raise ConfigurationError("the k-grid needs three points spanning a factor of four")
    fixed = run_sweep(config, jobs)
    scaled = run_sweep(bounded_rule(config), jobs)
    s_fixed = loglog_slope([r.k for r in fixed], [r.rel_err for r in fixed])
    s_scaled = loglog_slope([r.k for r in scaled], [r.rel_err for r in scaled])
    summary = {
        "slope_fixed_hk": s_fixed,
        "slope_h2k3": s_scaled,
        "checks": {"pollution_slope_above_0.5": s_fixed > 0.5,
                   "bounded_slope_at_most_0.2": s_scaled <= 0.2},
    }
    return fixed + scaled, summary


def relative_error_bound(hk, C5, k):
    """t (1 + t) with t = hk / (C5 log k), the shape of the relative-error bound."""
    t = hk / (C5 * math.log(k))
    return t * (1 + t)


def run_relative_error(config, jobs=1):
    """Relative H^1_k errors with the measured C6 = Cqo-normalized error / bound.

    With several h_factors the error reduction between consecutive factors at
    fixed (k, p) is reported next to the ratio of the leading bounds.
    """
    if config.problem != "dirichlet_disk" or config.rhs.kind != "planewave":
        raise ConfigurationError("relative errors use plane-wave data on the Dirichlet disk")
    records = run_sweep(config, jobs)
    rows = []
    for r in records:
        if r.failed:
            continue
        sol = Problem(config).exact(r.k)
        c_osc = oracle.oscillation_quotient(sol, config.R)
        bound = relative_error_bound(r.h * r.k, config.p_rule.C5, r.k)
        c6 = r.rel_err / (r.C_qo * bound)
        rows.append({"k": r.k, "h": r.h, "p": r.p, "rel_err": r.rel_err, "C_osc": c_osc,
                     "C6": c6, "C3": c6 / c_osc})
    reductions = []
    by_kp = {}
    for r in records:
        by_kp.setdefault((r.k, r.p), []).append(r)
    for (k, p), recs in sorted(by_kp.items()):
        recs = sorted(recs, key=lambda r: -r.h)
        for a, b in zip(recs, recs[1:]):
            C5 = config.p_rule.C5
            reductions.append({"k": k, "p": p, "h_ratio": a.h / b.h,
                               "error_ratio": a.rel_err / b.rel_err,
                               "bound_ratio": relative_error_bound(a.h * k, C5, k)
                               / relative_error_bound(b.h * k, C5, k)})
    summary = {
        "C6": rows,
        "reductions": reductions,
        "checks": {"relative_error_at_most_one": all(r.rel_err <= 1 for r in records
                                                      if not r.failed)},
    }
    return records, summary


def fit_eta_shape(records):
    """Fit k eta = C1 x (1 + x) + C2 k^(M+1) (h k / sigma)^p, x = h k / p, M = 0.

    With a single p the factor sigma^-p is absorbed into C2 (sigma = 1).
    Returns the parameters and the rms log residual.
    """
    recs = [r for r in records if np.isfinite(r.eta) and r.eta > 0]
    if len(recs) < 3:
        raise ContractError("need at least three eta values to fit the shape")
    k = np.array([r.k for r in recs])
    h = np.array([r.h for r in recs])
    p = np.array([r.p for r in recs], float)
    y = k * np.array([r.eta for r in recs])
    x = h * k / p
    free_sigma = len(set(p)) > 1

    def model(theta):
        c1, c2 = np.exp(theta[0]), np.exp(theta[1])
        sigma = np.exp(theta[2]) if free_sigma else 1.0
        return c1 * x * (1 + x) + c2 * k * (h * k / sigma) ** p

    def resid(theta):
        return np.log(model(theta)) - np.log(y)

    theta0 = np.array([0.0, 0.0, 0.0] if free_sigma else [0.0, 0.0])
    sol = least_squares(resid, theta0)
    out = {"C1": float(np.exp(sol.x[0])), "C2": float(np.exp(sol.x[1])),
           "sigma": float(np.exp(sol.x[2])) if free_sigma else 1.0,
           "residual": float(np.sqrt(np.mean(sol.fun ** 2)))}
    return out


def run_eta_sweep(config, jobs=1):
    """eta-hat along the grid; checks monotone decrease of k eta under refinement."""
    if not config.eta_samples:
        raise ConfigurationError("set eta_samples >= 16 for an eta sweep")
    records = run_sweep(config, jobs, with_errors=False)
    monotone = True
    for key in {(r.k, r.p) for r in records}:
        recs = sorted((r for r in records if (r.k, r.p) == key), key=lambda r: -r.h)
        for a, b in zip(recs, recs[1:]):
            if b.eta > a.eta + max(a.eta_spread, b.eta_spread):
                monotone = False
    summary = {"checks": {"eta_decreases_under_refinement": monotone}}
    try:
        summary["shape_fit"] = fit_eta_shape(records)
    except ContractError as exc:
        summary["shape_fit"] = {"error": str(exc)}
    return records, summary


# ---------------------------------------------------------------- output


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_records(path, records):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_FIELDS)
        for r in sorted(records, key=lambda r: (r.k, r.h, r.p)):
            d = asdict(r)
            w.writerow([_fmt(d[name]) for name in CSV_FIELDS])


def write_plot(path, x, y):
    with open(path, "w") as fh:
        for a, b in zip(x, y):
            fh.write("%r %r\n" % (float(a), float(b)))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def write_outputs(directory, records, summary, plots=None):
    """records.csv, summary.json and plot_<name>.dat files."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    if records is not None:
        write_records(out / "records.csv", records)
    with open(out / "summary.json", "w") as fh:
        json.dump(_jsonable(summary), fh, indent=2, sort_keys=True)
        fh.write("\n")
    for name, (x, y) in (plots or {}).items():
        write_plot(out / ("plot_%s.dat" % name), x, y)
    return out


# ---------------------------------------------------------------- decomposition and spectra


class DecomposeConfig(_Strict):
    k_grid: list[float] = Field(min_length=1)
    geometry: Literal["dirichlet", "transmission"] = "dirichlet"
    R0: float = Field(default=0.12, gt=0)
    c: float = Field(default=2.0, gt=0)
    beta: float = Field(default=1.0, gt=0)
    p: int = Field(default=4, ge=1, le=8)
    resolution: float = Field(default=12.0, ge=4)
    method: Literal["auto", "eigen", "chebyshev"] = "chebyshev"
    amplitude: float = Field(default=1.0, ge=0)
    slope_tolerance: float = Field(default=0.3, gt=0)
    out: str | None = None
    seed: int = 0

    @model_validator(mode="after")
    def _consistent(self):
        if any(k <= 0 for k in self.k_grid):
            raise ValueError("wavenumbers must be positive")
        return self


DECOMPOSE_FIELDS = ("k", "mode", "n_dofs", "L2_u_H2", "H1semi_u_H2", "L2_u_A", "H1semi_u_A",
                    "L2_u_H", "L2_u_eps", "stability_u_H2")


def run_decompose_sweep(config):
    """Decompose the solution for resonant two-scale data at every k; fit slopes."""
    from . import decomposition as dec

    geom = {"kind": config.geometry, "R0": config.R0}
    if config.geometry == "transmission":
        geom.update(c=config.c, beta=config.beta)
    layout = dec.CutoffLayout.default(config.R0)
    results, rows, times = [], [], []
    for k in sorted(config.k_grid):
        t0 = time.perf_counter()
        f, support = dec.resonant_two_scale_data(k, geom, layout.R, config.amplitude)
        res = dec.decompose(k, geom, f, support, layout=layout, p=config.p,
                            resolution=config.resolution, method=config.method,
                            data_wavenumber=3 * k)
        s = res.summary()
        s["mode"] = f.mode
        rows.append({name: s[name] for name in DECOMPOSE_FIELDS})
        results.append(res)
        times.append(time.perf_counter() - t0)
        log.info("decomposed k=%g in %.1fs", k, times[-1])
    summary = {"rows": rows, "wall_time": times}
    if len(results) >= 4:
        fits = dec.measure_exponents(results, orders=(0, 1))
        summary["fits"] = [f.as_dict() for f in fits]
        tol = config.slope_tolerance
        sel = {"u_H2 order 0", "u_H2 order 1", "u_A order 0"}
        summary["checks"] = {f.quantity: abs(f.slope - f.target) <= tol
                             for f in fits if f.quantity in sel}
    return rows, summary


class SpectrumConfig(_Strict):
    contents: list[Literal["flat", "dirichlet_disk", "penetrable_disk"]] = Field(
        default=["flat", "dirichlet_disk", "penetrable_disk"], min_length=1)
    k: float = Field(default=4.0, gt=0)
    Rsharp: float = Field(default=2.0, gt=0)
    R0: float = Field(default=0.5, gt=0)
    c: float = Field(default=2.0, gt=0)
    beta: float = Field(default=1.0, gt=0)
    resolution: float = Field(default=8.0, ge=4)
    p: int = Field(default=3, ge=1, le=8)
    min_count: int = Field(default=20, ge=1)
    n_lambda: int = Field(default=40, ge=2)
    lam_max: float | None = Field(default=None, gt=0)
    out: str | None = None
    seed: int = 0


def run_spectrum(config):
    """Eigenvalues of each reference operator and Weyl quotients against the flat lattice.

    The lambda-grid runs from the first value where the lattice count reaches
    ``min_count`` up to the resolved part of the computed spectrum, capped at
    ``lam_max``. By default the cap is what the requested resolution resolves on
    the flat torus, since disk meshes are refined near R0 and resolve far more.
    """
    from . import spectral

    summary, plots, checks = {}, {}, {}
    cap = config.lam_max
    if cap is None:
        cap = spectral.build_reference("flat", config.k, config.Rsharp, config.resolution,
                                       p=config.p).resolved_max
    for contents in config.contents:
        kw = {} if contents == "flat" else {"R0": config.R0}
        if contents == "penetrable_disk":
            kw.update(c=config.c, beta=config.beta)
        op = spectral.build_reference(contents, config.k, config.Rsharp, config.resolution,
                                      p=config.p, **kw)
        basis = spectral.eigenbasis(op, lam_max=min(cap, op.resolved_max))
        top = min(basis.cover, op.resolved_max, cap)
        lam0 = next(lam for lam in np.linspace(0, top, 2001)[1:]
                    if spectral.lattice_count(lam, op.hbar, config.Rsharp) >= config.min_count)
        grid = np.linspace(lam0, top, config.n_lambda)
        N = spectral.weyl_count(basis, grid)
        flat = np.array([spectral.lattice_count(lam, op.hbar, config.Rsharp) for lam in grid])
        ratio = N / flat
        summary[contents] = {
            "n_dofs": op.n, "n_eigs": basis.count, "resolved_max": op.resolved_max,
            "lambda": grid.tolist(), "count": N.tolist(), "lattice": flat.tolist(),
            "ratio_min": float(ratio.min()), "ratio_max": float(ratio.max()),
            "weyl_quotient": spectral.weyl_quotients(basis, grid).tolist(),
        }
        plots["weyl_%s" % contents] = (grid, ratio)
        plots["eigs_%s" % contents] = (np.arange(basis.count), basis.lam)
        checks["weyl_within_factor_2_%s" % contents] = bool(0.5 <= ratio.min() and ratio.max() <= 2)
    summary["checks"] = checks
    return summary, plots
