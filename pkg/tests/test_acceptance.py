"""Acceptance criteria, one test per criterion (criterion 7 is split in three).

Every test records a line in ACCEPTANCE; conftest prints them at the end of
the session.  A criterion passes only if its numeric checks hold and the
runtime stays inside its budget.
"""
import math
import time

import numpy as np
import pytest

from helmsplit import exact_oracle as oracle
from helmsplit import experiments as X
from helmsplit import spectral as S

ACCEPTANCE = {}

slow = pytest.mark.slow


class Clock:
    def __init__(self, budget):
        self.budget = budget
        self.t0 = time.perf_counter()

    @property
    def elapsed(self):
        return time.perf_counter() - self.t0


def record(key, checks, clock, note=""):
    """Store the outcome and assert it."""
    ok_checks = all(bool(v) for v in checks.values())
    in_time = clock.elapsed <= clock.budget
    failed = [k for k, v in checks.items() if not v]
    if not in_time:
        failed.append("runtime %.0fs > %.0fs" % (clock.elapsed, clock.budget))
    detail = note or ", ".join("%s=%s" % kv for kv in checks.items())
    ACCEPTANCE[key] = (ok_checks and in_time, "%s [%.1fs / %.0fs]%s" % (
        detail, clock.elapsed, clock.budget, "" if not failed else " failed: " + "; ".join(failed)))
    assert ok_checks and in_time, ACCEPTANCE[key][1]


# ---------------------------------------------------------------- 1


def test_criterion_01_oracle_validity():
    clock = Clock(1.0)
    dirichlet = oracle.mie_dirichlet(10.0, 1.0, (math.cos(0.3), math.sin(0.3)))
    transmission = oracle.mie_transmission(10.0, 1.0, 0.5, 1.0)
    zero = oracle.mie_transmission(10.0, 1.0, 1.0, 1.0)
    th = np.linspace(0, 2 * np.pi, 64, endpoint=False)
    x = 1.7 * np.column_stack([np.cos(th), np.sin(th)])
    r_d = dirichlet.interface_residual(64, rng=0)
    r_t = transmission.interface_residual(64, rng=0)
    r_z = float(np.abs(zero.scattered(x)).max())
    record("1", {"dirichlet_residual": r_d <= 1e-10, "interface_residual": r_t <= 1e-9,
                 "zero_contrast": r_z <= 1e-12}, clock,
           "dirichlet %.1e, interface %.1e, zero contrast %.1e" % (r_d, r_t, r_z))


# ---------------------------------------------------------------- 2


def _operator_norm(apply, n, rng, steps=30):
    v = rng.standard_normal(n)
    est = 0.0
    for _ in range(steps):
        w = apply(v)
        est = np.linalg.norm(w) / np.linalg.norm(v)
        v = np.real(apply(np.conj(w)))
    return est


def test_criterion_02_functional_calculus():
    clock = Clock(60.0)
    rng = np.random.default_rng(2)
    op = S.build_reference("dirichlet_disk", 4.0, 2.0, resolution=8.0, R0=1.0, p=3)
    basis = S.eigenbasis(op)
    pr = S.projectors(basis)
    v = rng.standard_normal(op.n)
    nv = op.norm(v)
    d_sum = op.norm(pr.low(v) + pr.high(v) - v) / nv
    hv = pr.high(v)
    d_nest = op.norm(pr.high_prime(hv) - hv) / nv

    def f(lam):
        return np.sin(lam) * np.exp(-lam / 10)

    # the operator norm in the weighted product, by power iteration on the
    # M-orthonormal coordinates
    def apply_coords(a):
        return np.asarray(f(basis.lam)) * a

    fnorm = _operator_norm(apply_coords, basis.count, rng)
    sup = float(np.abs(f(np.linspace(0, basis.lam[-1], 200001))).max())
    z = 2.3 + 0.7j
    res = S.borel_apply(basis, S.resolvent_function(z), v)
    direct = op.resolvent(z, v)
    d_res = op.norm(res - direct) / op.norm(direct)
    record("2", {"eigenpairs>=500": basis.count >= 500, "PiL+PiH=Id": d_sum <= 1e-14,
                 "PiH'PiH=PiH": d_nest <= 1e-12, "norm<=sup": fnorm <= sup + 1e-10,
                 "resolvent": d_res <= 1e-8}, clock,
           "%d eigenpairs, |PiL+PiH-Id| %.1e, |PiH'PiH-PiH| %.1e, |f(P)| %.6f <= %.6f, "
           "resolvent %.1e" % (basis.count, d_sum, d_nest, fnorm, sup, d_res))


# ---------------------------------------------------------------- 3


def test_criterion_03_multiplier_vs_eigen():
    clock = Clock(30.0)
    rng = np.random.default_rng(3)
    op = S.build_reference("flat", 4.0, 2.0, resolution=8.0, discretization="grid")
    basis = S.eigenbasis(op)
    n = op.grid_n
    worst = 0.0
    for _ in range(5):
        a, b, c = rng.uniform(0.2, 2), rng.uniform(0, 6), rng.uniform(0.5, 3)

        def f(lam, a=a, b=b, c=c):
            return np.exp(-a * (lam - b) ** 2) + S.master_cutoff(lam / c)

        v = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        m = S.fourier_multiplier_apply(f, v, op.hbar, op.Rsharp)
        e = S.borel_apply(basis, f, v.ravel()).reshape(n, n)
        worst = max(worst, float(np.linalg.norm(m - e) / np.linalg.norm(v)))
    record("3", {"agree<=1e-8": worst <= 1e-8}, clock,
           "%d x %d grid, worst relative difference %.1e" % (n, n, worst))


# ---------------------------------------------------------------- 4


def test_criterion_04_helffer_sjostrand():
    clock = Clock(120.0)
    rng = np.random.default_rng(4)
    n = 200
    # periodic second-difference operator -hbar^2 d^2/dx^2 on [0, 2 pi)
    hbar, h = 0.1, 2 * np.pi / n
    A = np.diag(np.full(n, 2.0)) - np.eye(n, k=1) - np.eye(n, k=-1)
    A[0, -1] = A[-1, 0] = -1.0
    A *= hbar ** 2 / h ** 2
    lam, V = np.linalg.eigh(A)
    v = rng.standard_normal(n)
    ref = V @ (np.exp(-0.5 * (lam - 3.0) ** 2) * (V.T @ v))
    tol = 1e-7
    out = {}
    for order in (2, 4):
        g = S.AlmostAnalytic.gaussian(order=order, scale=0.5, center=3.0)
        r = S.helffer_sjostrand_apply(A, g, v, tol=tol)
        out[order] = (r, float(np.linalg.norm(r.value - ref) / np.linalg.norm(v)))
    cross = float(np.linalg.norm(out[2][0].value - out[4][0].value) / np.linalg.norm(v))
    est = out[2][0].error_estimate + out[4][0].error_estimate
    record("4", {"order2<=1e-6": out[2][1] <= 1e-6, "order4<=1e-6": out[4][1] <= 1e-6,
                 "orders_agree": cross <= est + 2 * tol}, clock,
           "n=%d, error order 2 %.1e, order 4 %.1e, |order 2 - order 4| %.1e (estimate %.1e)"
           % (n, out[2][1], out[4][1], cross, est))


# ---------------------------------------------------------------- 5


@slow
def test_criterion_05_decomposition_exponents():
    clock = Clock(1800.0)
    cfg = X.DecomposeConfig(k_grid=[10, 20, 40, 80])
    rows, summary = X.run_decompose_sweep(cfg)
    fits = {f["quantity"]: f["slope"] for f in summary["fits"]}
    record("5", summary["checks"], clock,
           "slopes |u_H2| %.2f (-2), |grad u_H2| %.2f (-1), |u_A| %.2f (-1)"
           % (fits["u_H2 order 0"], fits["u_H2 order 1"], fits["u_A order 0"]))


# ---------------------------------------------------------------- 6


def test_criterion_06_multiplier_derivative_bound():
    clock = Clock(60.0)
    rng = np.random.default_rng(6)
    mu = 2.0
    lam = 2 * math.sqrt(mu)  # psi(s / mu) vanishes for s >= 4 mu = lam^2

    def phi(s):
        return S.master_cutoff(s / mu)

    worst = 0.0
    n, Rs = 128, 1.0
    for hbar in (1 / 5, 1 / 10, 1 / 20):
        for _ in range(20):
            v = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
            for order in range(4):
                for beta in [(i, order - i) for i in range(order + 1)]:
                    r = S.multiplier_derivative_ratio(phi, v, beta, hbar, Rs)
                    worst = max(worst, r / (lam / hbar) ** order)
    record("6", {"bound": worst <= 1.0}, clock,
           "max ratio / (lambda/hbar)^|beta| = %.3f over 3 hbar, 20 v, |beta| <= 3" % worst)


# ---------------------------------------------------------------- 7


K_CSOL = np.geomspace(5, 50, 10)


@slow
def test_criterion_07a_csol_dirichlet():
    clock = Clock(100.0)
    est = oracle.estimate_csol({"kind": "dirichlet", "R0": 1.0}, K_CSOL, 2.0)
    record("7a", {"M_hat": -0.2 <= est.M_hat <= 0.2}, clock,
           "sound-soft disk M_hat = %.3f" % est.M_hat)


@slow
@pytest.mark.xfail(strict=False, reason="the literal c <= 1 reading traps rays inside the disk; "
                   "see the decisions ledger")
def test_criterion_07b_csol_transmission_literal():
    clock = Clock(100.0)
    fits = {}
    for beta in (0.25, 1.0):
        geo = {"kind": "transmission", "R0": 1.0, "c": 0.5, "beta": beta}
        fits[beta] = oracle.estimate_csol(geo, K_CSOL, 2.0).M_hat
    record("7b", {"beta=%g" % b: -0.2 <= m <= 0.2 for b, m in fits.items()}, clock,
           "c = 0.5: " + ", ".join("beta %g M_hat %.3f" % kv for kv in fits.items()))


@slow
def test_criterion_07c_csol_transmission_reciprocal():
    clock = Clock(100.0)
    fits = {}
    for beta in (0.25, 1.0):
        geo = {"kind": "transmission", "R0": 1.0, "c": 2.0, "beta": beta}
        fits[beta] = oracle.estimate_csol(geo, K_CSOL, 2.0).M_hat
    record("7c", {"beta=%g" % b: -0.2 <= m <= 0.2 for b, m in fits.items()}, clock,
           "c = 2 (interior speed above exterior): "
           + ", ".join("beta %g M_hat %.3f" % kv for kv in fits.items()))


# ---------------------------------------------------------------- 8-10


@slow
def test_criterion_08_quasi_optimality():
    clock = Clock(1800.0)
    cfg = X.ExperimentConfig(k_grid=[10, 20, 40], h_rule={"kind": "hk", "value": 0.5},
                             p_rule={"kind": "log", "C5": 1.5})
    records, summary = X.run_quasiopt_sweep(cfg)
    checks = dict(summary["checks"])
    checks["all_points_above_threshold"] = summary["n_above_threshold"] == 3
    record("8", checks, clock, "ratios " + ", ".join(
        "k=%g p=%d %.6f <= C_qo %.2f" % (r.k, r.p, r.ratio, r.C_qo) for r in records))


@slow
def test_criterion_09_pollution():
    clock = Clock(1200.0)
    cfg = X.ExperimentConfig(R0=0.25, R=0.75, k_grid=[10, 20, 40, 80],
                             h_rule={"kind": "hk", "value": 1.0})
    records, summary = X.run_pollution_demo(cfg)
    record("9", summary["checks"], clock, "slope fixed hk %.2f (> 0.5), h^2k^3 %.2f (<= 0.2)"
           % (summary["slope_fixed_hk"], summary["slope_h2k3"]))


@slow
def test_criterion_10_eta_shape():
    clock = Clock(1800.0)
    cfg = X.ExperimentConfig(k_grid=[10, 20, 40], h_rule={"kind": "hk", "value": 1.0},
                             p_rule={"kind": "fixed", "p": 2}, h_factors=[1.0, 0.5, 0.25],
                             eta_samples=16, seed=3)
    records, summary = X.run_eta_sweep(cfg)
    fit = summary["shape_fit"]
    checks = dict(summary["checks"])
    checks["fit_residual_reported"] = math.isfinite(fit.get("residual", float("nan")))
    record("10", checks, clock, "k eta decreases under refinement: %s; shape fit C1 %.3g, "
           "C2 %.3g, rms log residual %.3f" % (summary["checks"]["eta_decreases_under_refinement"],
                                               fit["C1"], fit["C2"], fit["residual"]))


# ---------------------------------------------------------------- 11


@slow
def test_criterion_11_weyl():
    clock = Clock(300.0)
    summary, _ = X.run_spectrum(X.SpectrumConfig())
    record("11", summary["checks"], clock, "; ".join(
        "%s ratio in [%.2f, %.2f]" % (c, summary[c]["ratio_min"], summary[c]["ratio_max"])
        for c in ("flat", "dirichlet_disk", "penetrable_disk")))


# ---------------------------------------------------------------- 12


@slow
def test_criterion_12_heat_constants():
    clock = Clock(600.0)
    flat = S.build_reference("flat", 4.0, 1.0, resolution=8.0, discretization="grid")
    fb = S.eigenbasis(flat)
    const, _ = S.heat_derivative_constant(fb, [(1, 0), (0, 1)], np.geomspace(1e-3, 3, 60))
    c1 = max(const.values())
    bound = (2 * math.e) ** -0.5 + 0.05
    op = S.build_reference("dirichlet_disk", 1.0, 1.0, resolution=2 * np.pi / 0.04, R0=0.4, p=6)
    basis = S.eigenbasis(op, lam_max=250.0)

    def rho(x):
        return S.smooth_plateau(np.hypot(x[..., 0], x[..., 1]), 0.5, 0.8)

    hc = S.heat_constants(basis, 4, np.geomspace(0.1, 1.0, 16), rho)
    record("12", {"flat_order1": c1 <= bound, "disk_finite": bool(np.all(np.isfinite(hc.per_order))),
                  "log_convex": hc.log_convex}, clock,
           "flat |alpha|=1 %.4f <= %.4f; disk per-order %s, nu %.3g, log-convex %s"
           % (c1, bound, np.array2string(hc.per_order, precision=3), hc.nu, hc.log_convex))
