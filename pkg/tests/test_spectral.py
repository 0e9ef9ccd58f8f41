import math

import numpy as np
import pytest

from helmsplit import spectral as S
from helmsplit.errors import ConfigurationError, ContractError, DomainError, TruncationError


@pytest.fixture(scope="module")
def grid_basis():
    op = S.build_reference("flat", 3.0, 1.0, resolution=6.0, discretization="grid")
    return S.eigenbasis(op)


@pytest.fixture(scope="module")
def disk_basis():
    op = S.build_reference("dirichlet_disk", 3.0, 1.0, resolution=6.0, R0=0.4, p=2)
    return S.eigenbasis(op)


def test_cutoff_shape():
    lam = np.linspace(-6, 6, 1201)
    psi = S.master_cutoff(lam)
    assert np.all(psi[np.abs(lam) <= 2] == 1)
    assert np.all(psi[np.abs(lam) >= 4] == 0)
    right = psi[lam >= 0]
    assert np.all(np.diff(right) <= 0)
    r = np.linspace(0, 2, 401)
    p = S.smooth_plateau(r, 0.5, 1.0)
    assert np.all(p[r <= 0.5] == 1) and np.all(p[r >= 1] == 0)


def test_step_derivative_matches_differences():
    x = np.linspace(0.05, 0.95, 19)
    h = 1e-6
    fd = (S.step(x + h) - S.step(x - h)) / (2 * h)
    assert np.allclose(S.step_prime(x), fd, rtol=1e-6, atol=1e-9)


def test_cutoff_pair_rules():
    cp = S.CutoffPair(2.0)
    assert cp.mu_prime == 1.0 and cp.check()
    lam = np.linspace(0, 10, 501)
    assert np.allclose(cp.low(lam) + cp.high(lam), 1)
    for mu, mp in ((1.0, None), (2.0, 1.5), (4.0, 0.4)):
        with pytest.raises(ConfigurationError):
            S.CutoffPair(mu, mp)
    assert S.default_mu(0.5) == 8.0


def test_grid_spectrum_is_lattice(grid_basis):
    op = grid_basis.operator
    n = op.grid_n
    xi = S.torus_frequencies(n, op.Rsharp)
    X, Y = np.meshgrid(xi, xi, indexing="ij")
    exact = np.sort((op.hbar ** 2 * (X ** 2 + Y ** 2)).ravel())
    assert np.max(np.abs(grid_basis.lam - exact) / (1 + exact)) < 1e-10
    for lam in (0.5, 2.0, 5.0):
        assert S.weyl_count(grid_basis, [lam])[0] == S.lattice_count(lam, op.hbar, op.Rsharp)


def test_fem_basis_quality(disk_basis):
    op = disk_basis.operator
    assert op.symmetry_defect() < 1e-12
    assert disk_basis.complete
    assert disk_basis.gram_defect() < 1e-9
    assert disk_basis.lam[0] > 0
    assert disk_basis.residual() < 1e-8


def test_borel_identity_and_resolvent(disk_basis, rng):
    op = disk_basis.operator
    v = rng.standard_normal(op.n)
    assert np.allclose(S.borel_apply(disk_basis, lambda x: np.ones_like(x), v), v, atol=1e-9)
    z = 1.3 + 0.4j
    a = S.borel_apply(disk_basis, S.resolvent_function(z), v)
    b = op.resolvent(z, v)
    assert op.norm(a - b) <= 1e-9 * op.norm(b)


def test_projectors(disk_basis, rng):
    op = disk_basis.operator
    pr = S.projectors(disk_basis)
    v = rng.standard_normal(op.n)
    low = pr.low(v)
    assert op.norm(low + pr.high(v) - v) < 1e-12 * op.norm(v)
    # psi_mu = 1 on supp psi_mu', so Pi_H' fixes the range of Pi_H
    hv = pr.high(v)
    assert op.norm(pr.high_prime(hv) - hv) < 1e-9 * op.norm(v)
    assert op.norm(pr.low(low) - low) > 0


def test_truncation_refused(rng):
    op = S.build_reference("flat", 3.0, 1.0, resolution=6.0, discretization="grid")
    basis = S.eigenbasis(op, lam_max=3.0)
    assert basis.cover == 3.0
    with pytest.raises(TruncationError):
        S.borel_apply(basis, lambda x: np.exp(-x), rng.standard_normal(op.n))
    with pytest.raises(TruncationError):
        S.projectors(basis)
    with pytest.raises(TruncationError):
        S.weyl_count(basis, [4.0])


def test_chebyshev_matches_borel(disk_basis, rng):
    op = disk_basis.operator
    cp = S.CutoffPair()
    filt = S.ChebyshevFilter(op, cp.low)
    lam = np.linspace(0, 30, 301)
    assert np.max(np.abs(filt.scalar(lam) - cp.low(lam))) < 1e-8
    v = rng.standard_normal(op.n)
    a = filt.apply(v)
    b = S.borel_apply(disk_basis, cp.low, v)
    assert op.norm(a - b) < 1e-7 * op.norm(v)


def test_fourier_multiplier_matches_eigen_path(grid_basis, rng):
    op = grid_basis.operator
    n = op.grid_n
    v = rng.standard_normal((n, n))
    f = S.master_cutoff
    a = S.fourier_multiplier_apply(f, v, op.hbar, op.Rsharp)
    b = S.borel_apply(grid_basis, f, v.ravel()).reshape(n, n)
    assert np.max(np.abs(a - b)) < 1e-10 * np.max(np.abs(v))
    with pytest.raises(ContractError):
        S.fourier_multiplier_apply(f, v, op.hbar, op.Rsharp, contents="dirichlet_disk")


def test_fourier_derivative_exact_on_modes():
    n, Rs = 32, 1.0
    g = -Rs + 2 * Rs / n * np.arange(n)
    X, Y = np.meshgrid(g, g, indexing="ij")
    v = np.sin(3 * np.pi * X / Rs) * np.cos(2 * np.pi * Y / Rs)
    d = S.fourier_derivative(v, (1, 1), Rs)
    ref = -(3 * np.pi) * (2 * np.pi) * np.cos(3 * np.pi * X) * np.sin(2 * np.pi * Y)
    assert np.max(np.abs(d - ref)) < 1e-10 * np.max(np.abs(ref))


def test_almost_analytic_dbar():
    f = S.AlmostAnalytic.gaussian(order=3, scale=0.7, center=0.5)
    x, y, h = 0.8, 0.3, 1e-5
    F = f.extension
    fd = 0.5 * ((F(x + h, y) - F(x - h, y)) / (2 * h) + 1j * (F(x, y + h) - F(x, y - h)) / (2 * h))
    assert abs(f.dbar(np.array(x), np.array(y)) - fd) < 1e-7
    # vanishes to order n on the real axis
    ys = np.array([1e-2, 5e-3])
    r = np.abs(f.dbar(np.array([x, x]), ys))
    assert math.log(r[0] / r[1]) / math.log(2) == pytest.approx(3, abs=0.1)


def test_helffer_sjostrand_matches_eigen_path(rng):
    A = rng.standard_normal((30, 30))
    A = A @ A.T / 30
    v = rng.standard_normal(30)
    for order in (2, 4):
        f = S.AlmostAnalytic.gaussian(order=order)
        res = S.helffer_sjostrand_apply(A, f, v, tol=1e-6)
        lam, V = np.linalg.eigh(A)
        ref = V @ (np.exp(-lam ** 2) * (V.T @ v))
        assert np.linalg.norm(res.value - ref) <= 1e-5 * np.linalg.norm(v)
        assert res.error_estimate < 1e-5


def test_heat_constants(grid_basis):
    hc = S.heat_constants(grid_basis, 3, np.geomspace(1e-3, 1.0, 12))
    assert all(np.isfinite(hc.per_order)) and hc.nu > 0
    assert set(hc.constants) == {a for m in (1, 2, 3) for a in S.multi_indices(m)}
    with pytest.raises(DomainError):
        S.heat_apply(grid_basis, 0.0, np.ones(grid_basis.operator.n))


def test_heat_semigroup(disk_basis, rng):
    v = rng.standard_normal(disk_basis.operator.n)
    a = S.heat_apply(disk_basis, 0.2, S.heat_apply(disk_basis, 0.3, v))
    b = S.heat_apply(disk_basis, 0.5, v)
    assert np.allclose(a, b, atol=1e-12)


def test_weyl_quotient_near_one():
    op = S.build_reference("flat", 12.0, 1.0, resolution=6.0, discretization="grid")
    basis = S.eigenbasis(op, lam_max=1.0)
    q = S.weyl_quotients(basis, [0.6, 0.9])
    assert np.all(np.abs(q - 1) < 0.1)


def test_pseudolocality_decays():
    chi1 = lambda x: (x[:, 0] < -0.5).astype(float)  # noqa: E731
    chi2 = lambda x: ((x[:, 0] > 0.3) & (x[:, 0] < 0.7)).astype(float)  # noqa: E731
    far = []
    for k in (6.0, 12.0, 24.0):
        op = S.build_reference("flat", k, 1.0, resolution=5.0, discretization="grid")
        basis = S.eigenbasis(op)
        far.append(S.pseudolocality_norm(basis, S.master_cutoff, chi1, chi2))
        assert S.pseudolocality_norm(basis, S.master_cutoff, chi2, chi2) <= 1 + 1e-9
    assert far[0] > far[1] > far[2]


def test_errors():
    with pytest.raises(ConfigurationError):
        S.build_reference("flat", 3.0, 1.0, resolution=3.0)
    with pytest.raises(ConfigurationError):
        S.build_reference("torus", 3.0, 1.0)
    with pytest.raises(ConfigurationError):
        S.build_reference("dirichlet_disk", 3.0, 1.0, discretization="grid", R0=0.3)
    with pytest.raises(DomainError):
        S.build_reference("flat", -1.0, 1.0)
    with pytest.raises(ConfigurationError):
        S.build_reference("penetrable_disk", 3.0, 1.0)
