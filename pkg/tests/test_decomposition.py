import math

import numpy as np
import pytest

from helmsplit import decomposition as D
from helmsplit.errors import ConfigurationError, ContractError, TruncationError
from helmsplit.exact_oracle import bump
from helmsplit.spectral import CutoffPair, borel_apply, eigenbasis

GEOM = {"kind": "dirichlet", "R0": 0.12}


@pytest.fixture(scope="module")
def result():
    layout = D.CutoffLayout.default(0.12)
    f, sup = D.resonant_two_scale_data(5.0, GEOM, layout.R)
    return D.decompose(5.0, GEOM, f, sup, p=3, method="chebyshev", data_wavenumber=15.0)


@pytest.fixture(scope="module")
def basis(result):
    # psi_mu vanishes beyond 4 mu = 8, so a truncated basis suffices
    return eigenbasis(result.op, lam_max=10.0)


def test_layout_default_is_nested():
    lay = D.CutoffLayout.default(0.12)
    r = np.linspace(0, lay.Rsharp, 2001)
    for inner, outer in (("rho4", "rho3"), ("rho3", "rho2"), ("rho2", "rho1")):
        on = lay.profile(inner, r) > 0
        assert np.all(lay.profile(outer, r[on]) == 1)
    assert np.all(lay.profile("phi", r[r <= lay.R]) == 1)
    assert lay.derivative_growth("rho1") > 1


def test_layout_rejects_bad_nesting():
    with pytest.raises(ConfigurationError):
        D.CutoffLayout(0.12, 0.44, 0.6, (0.16, 0.25), (0.23, 0.28), (0.30, 0.35),
                       (0.37, 0.42), (0.44, 0.56))
    with pytest.raises(ConfigurationError):
        D.CutoffLayout(0.2, 0.44, 0.6, (0.16, 0.21), (0.23, 0.28), (0.30, 0.35),
                       (0.37, 0.42), (0.44, 0.56))


def test_data_normalization():
    a, b = 0.2, 0.4
    r = np.linspace(a, b, 20001)
    ref = math.sqrt(2 * np.pi * np.trapezoid(r * bump(r, a, b) ** 2, r))
    assert D._bump_l2(a, b) == pytest.approx(ref, rel=1e-6)
    f = D.two_scale_data(4.0, (a, b), amplitude=0.0)
    x = np.array([[0.3, 0.0], [0.0, 0.3]])
    assert np.allclose(np.abs(f(x)), bump(np.full(2, 0.3), a, b))


def test_fields_add_up(result):
    f = result.fields
    assert result.completeness_defect() < 1e-12
    assert np.allclose(f["u_A"] + f["u_eps"], f["u_L"], atol=1e-14)
    assert np.allclose(f["u_H"] + f["u_eps"], f["u_H2"], atol=1e-14)
    assert np.allclose(f["u_A_R0"] + f["u_A_inf"], f["u_A"], atol=1e-14)
    assert result.trace_defect() == 0.0


def test_high_part_has_no_low_frequencies(result, basis):
    op = result.op
    free = op.space.free
    uH = result.u_H[free]
    low = borel_apply(basis, result.cutoffs.low, uH)
    # Pi_L Pi_H = psi (1 - psi), nonzero only on the transition band
    tail = borel_apply(basis, lambda x: (x < 2 * result.cutoffs.mu) * 1.0, uH)
    assert op.norm(tail) < 1e-10 * op.norm(result.w[free])
    assert op.norm(low) < op.norm(uH)


def test_band_limited_input_has_no_high_part(result, basis):
    op = result.op
    free = op.space.free
    v = np.zeros(op.space.ndof, complex)
    v[free] = borel_apply(basis, lambda x: (x <= result.cutoffs.mu) * 1.0, result.w[free])
    out = D.split_field(op, v, result.layout, result.cutoffs)
    assert op.norm(out["u_H"][free]) < 1e-10 * op.norm(v[free])


def test_split_is_linear(result, rng):
    op = result.op
    n = op.space.ndof
    w2 = rng.standard_normal(n)
    low = D.low_pass(op, result.cutoffs, "chebyshev")
    a = D.split_field(op, 2j * result.w + w2, result.layout, result.cutoffs, low)
    b1 = result.fields
    b2 = D.split_field(op, w2, result.layout, result.cutoffs, low)
    for name in D.FIELDS:
        ref = 2j * b1[name] + b2[name]
        assert np.allclose(a[name], ref, atol=1e-10 * np.abs(ref).max())


def test_low_pass_idempotent_on_plateau(result, basis):
    op = result.op
    free = op.space.free
    v = borel_apply(basis, lambda x: (x <= 1.5 * result.cutoffs.mu) * 1.0, result.w[free])
    lp = D.low_pass(op, result.cutoffs, "chebyshev")
    full = np.zeros(op.space.ndof, complex)
    full[free] = v
    assert op.norm(lp(full)[free] - v) < 1e-8 * op.norm(v)


def test_summary_and_export(result, tmp_path):
    s = result.summary()
    assert s["f_norm"] == 1.0 and s["g_norm"] == pytest.approx(1 / 25)
    assert all(np.isfinite(v) for v in s.values())
    result.export(tmp_path)
    assert (tmp_path / "u_H2.csv").exists() and (tmp_path / "summary.json").exists()


def test_factorial_check(result):
    fit = D.factorial_growth_check(result, max_order=3)
    assert len(fit.norms) == 4 and fit.C2 > 0 and fit.C3 > 0
    with pytest.raises(ContractError):
        D.factorial_growth_check(result, max_order=4)
    with pytest.raises(ContractError):
        result.derivative_norm("u_A", (4, 0))


def test_fit_exponent():
    ks = np.array([10.0, 20.0, 40.0, 80.0])
    fit = D.fit_exponent("x", ks, 3.0 * ks ** -2, target=-2.0)
    assert fit.slope == pytest.approx(-2) and fit.residual < 1e-12 and not fit.flagged
    with pytest.raises(ContractError):
        D.fit_exponent("x", ks[:3], ks[:3])


def test_errors():
    f = D.two_scale_data(4.0, (0.2, 0.4))
    with pytest.raises(TruncationError):
        D.decompose(4.0, GEOM, f, (0.12, 0.44), cutoffs=CutoffPair(400.0), p=3)
    with pytest.raises(ConfigurationError):
        D.decompose(4.0, GEOM, f, (0.12, 0.44), layout=D.CutoffLayout.default(0.1))
    with pytest.raises(ConfigurationError):
        D.low_pass(None, CutoffPair(), method="magic")
