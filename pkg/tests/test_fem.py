import math

import numpy as np
import pytest

from helmsplit import exact_oracle as oracle
from helmsplit import fem
from helmsplit.dtn import DtnOperator
from helmsplit.errors import ConfigurationError, ContractError, DataError, GeometryError
from helmsplit.fem.assembly import assemble_stiffness_mass, element_quadrature
from helmsplit.fem.mesh import REGION_INNER

UNIT = fem.Coefficients({"default": 1.0}, {"default": 1.0})


def reference_triangle(p=1):
    mesh = fem.Mesh(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), np.array([[0, 1, 2]]),
                    np.zeros(1, int), np.zeros(1), -np.ones(1, int))
    return fem.FeSpace(mesh, p)


# ---------------------------------------------------------------- meshes


def test_coarse_mesh_on_circles():
    mesh = fem.build_mesh("dirichlet_disk", 1.0, 3.0, 1.0)
    assert mesh.n_elements >= 8
    assert mesh.h <= 1.0
    for name, r in mesh.circles.items():
        elems, edges = mesh.boundary_edges(name)
        assert len(elems) > 0
        a = mesh.tris[elems, edges]
        b = mesh.tris[elems, (edges + 1) % 3]
        for v in (a, b):
            assert np.allclose(np.hypot(*mesh.points[v].T), r, atol=1e-12)


def test_positive_orientation():
    for geo in ("dirichlet_disk", "penetrable_disk"):
        mesh = fem.build_mesh(geo, 0.5, 1.0, 0.1)
        assert np.all(mesh.signed_areas() > 0)


def test_halving_doubles_boundary_edges():
    counts = []
    for h in (0.2, 0.1, 0.05):
        mesh = fem.build_mesh("dirichlet_disk", 0.5, 1.0, h)
        counts.append(len(mesh.boundary_edges("outer")[0]))
    for a, b in zip(counts, counts[1:]):
        assert abs(b - 2 * a) <= 2


def test_quasi_uniform_and_no_straddling():
    ratios = []
    for h in (0.2, 0.1, 0.05):
        mesh = fem.build_mesh("penetrable_disk", 0.5, 1.0, h)
        ratios.append(mesh.quasi_uniformity())
        xy = mesh.elem_xy
        r = np.hypot(xy[..., 0], xy[..., 1])
        inner = mesh.tags == REGION_INNER
        assert np.all(r[inner] <= 0.5 + 1e-12)
        assert np.all(r[~inner] >= 0.5 - 1e-12)
    assert max(ratios) <= 4


def test_mesh_roundtrip(tmp_path):
    mesh = fem.build_mesh("penetrable_disk", 0.4, 1.0, 0.2)
    mesh.save(tmp_path / "m.txt")
    back = fem.Mesh.load(tmp_path / "m.txt")
    assert np.array_equal(back.tris, mesh.tris)
    assert np.array_equal(back.points, mesh.points)
    assert back.circles == mesh.circles
    again = fem.build_mesh("penetrable_disk", 0.4, 1.0, 0.2, seed=5)
    assert np.array_equal(again.points, mesh.points)


def test_infeasible_mesh():
    with pytest.raises(GeometryError):
        fem.build_mesh("dirichlet_disk", 1.0, 1.5, 0.6)
    with pytest.raises(GeometryError):
        fem.build_mesh("dirichlet_disk", 2.0, 1.0, 0.1)


def test_dimension_scaling():
    q = []
    for p in (1, 2, 3):
        for h in (0.2, 0.1, 0.05):
            space = fem.FeSpace(fem.build_mesh("dirichlet_disk", 0.5, 1.0, h), p)
            q.append(space.ndof * (space.mesh.h / p) ** 2)
    assert max(q) / min(q) <= 4


# ---------------------------------------------------------------- element blocks


def test_p1_reference_blocks():
    K, M = assemble_stiffness_mass(reference_triangle(), UNIT)
    M = M.toarray()
    K = K.toarray()
    assert np.allclose(np.diag(M), 1 / 12, atol=1e-15)
    assert np.allclose(M[~np.eye(3, dtype=bool)], 1 / 24, atol=1e-15)
    ref = 0.5 * np.array([[2, -1, -1], [-1, 1, 0], [-1, 0, 1]])
    assert np.allclose(K, ref, atol=1e-14)
    assert np.allclose(K @ np.ones(3), 0, atol=1e-14)


def test_constant_in_stiffness_kernel():
    space = fem.FeSpace(fem.build_mesh("penetrable_disk", 0.5, 1.0, 0.2), 3)
    K, _ = assemble_stiffness_mass(space, fem.Coefficients.transmission(0.5, 0.7))
    assert np.max(np.abs(K @ np.ones(space.ndof))) < 1e-11


def test_non_elliptic_rejected():
    space = reference_triangle()
    bad = fem.Coefficients({"default": lambda x: x[..., 0] - 0.5}, {"default": 1.0})
    with pytest.raises(DataError, match="point"):
        assemble_stiffness_mass(space, bad)


# ---------------------------------------------------------------- Galerkin


@pytest.fixture(scope="module")
def scattering():
    k, R0, R = 5.0, 0.5, 1.0
    space = fem.FeSpace(fem.build_mesh("dirichlet_disk", R0, R, 0.1), 3, dirichlet=("inner",))
    dtn = DtnOperator(k, R)
    system = fem.assemble(space, fem.Coefficients.dirichlet(), k, dtn, ("planewave", (1.0, 0.0)))
    return k, R0, R, space, dtn, system


def test_matches_mie_within_quasi_optimality(scattering):
    k, R0, R, space, dtn, system = scattering
    u = fem.galerkin_solve(system)
    sol = oracle.mie_dirichlet(k, R0)
    exact = lambda x: sol.evaluate(x, gradient=True)  # noqa: E731
    err, ref = fem.norms_against(space, u.coeffs, exact, k)
    best, _ = fem.norms_against(space, fem.H1kProjector(space, k).project_function(exact), exact, k)
    c_qo = 2 * (1 + dtn.continuity_constant(inner_radius=R0))
    assert best * (1 - 1e-6) <= err <= c_qo * best
    assert err / ref < 1e-3


def test_residual_and_zero_data(scattering):
    k, R0, R, space, dtn, system = scattering
    u = fem.galerkin_solve(system)
    f = system.free
    assert np.linalg.norm(system.apply(u.coeffs) - system.F[f]) <= 1e-10 * np.linalg.norm(system.F[f])
    zero = fem.assemble(space, fem.Coefficients.dirichlet(), k, dtn)
    assert np.all(fem.galerkin_solve(zero).coeffs == 0)


def test_complex_symmetric_form(rng):
    k = 3.0
    space = fem.FeSpace(fem.build_mesh("dirichlet_disk", 0.5, 1.0, 0.25), 1, dirichlet=("inner",))
    system = fem.assemble(space, fem.Coefficients.dirichlet(), k, DtnOperator(k, 1.0))
    nf = len(space.free)
    cols = []
    for j in space.free:
        e = np.zeros(space.ndof)
        e[j] = 1
        cols.append(system.apply(e))
    A = np.array(cols).T
    assert np.max(np.abs(A - A.T)) <= 1e-12 * np.max(np.abs(A))
    assert A.shape == (nf, nf)


def test_adjoint_consistency(rng, scattering):
    k, R0, R, space, dtn, system = scattering
    f = lambda x: np.exp(-((x[..., 0] - 0.7) ** 2 + x[..., 1] ** 2) / 0.02)  # noqa: E731
    b = fem.load_volume(space, f)
    w = fem.adjoint_solve(system, b[system.free])
    for _ in range(3):
        v = np.zeros(space.ndof, complex)
        v[system.free] = rng.standard_normal(len(system.free)) + 1j * rng.standard_normal(len(system.free))
        lhs = np.vdot(w[system.free], system.apply(v))
        rhs = np.vdot(b[system.free], v[system.free])
        assert abs(lhs - rhs) <= 1e-8 * abs(rhs)


def test_continuity_bound(rng):
    k, R0, R = 6.0, 0.5, 1.0
    space = fem.FeSpace(fem.build_mesh("dirichlet_disk", R0, R, 0.2), 2, dirichlet=("inner",))
    dtn = DtnOperator(k, R)
    system = fem.assemble(space, fem.Coefficients.dirichlet(), k, dtn)
    proj = fem.H1kProjector(space, k)
    bound = 1 + dtn.continuity_constant(inner_radius=R0)
    f = space.free
    for _ in range(10):
        u = np.zeros(space.ndof, complex)
        v = np.zeros(space.ndof, complex)
        u[f] = rng.standard_normal(len(f)) + 1j * rng.standard_normal(len(f))
        v[f] = rng.standard_normal(len(f)) + 1j * rng.standard_normal(len(f))
        assert abs(system.form(u, v)) <= bound * proj.norm(u) * proj.norm(v)


# ---------------------------------------------------------------- interpolation and norms


def test_polynomial_reproduction():
    mesh = fem.build_mesh("dirichlet_disk", 0.5, 1.0, 0.15)
    straight = np.nonzero(mesh.curved_edge < 0)[0]
    for p in (1, 2, 3):
        poly = lambda x: (1 + x[..., 0]) ** p - 2 * x[..., 1] ** p + x[..., 0] * x[..., 1] ** (p - 1)  # noqa: E731
        space = fem.FeSpace(mesh, p)
        c = fem.interpolate(space, poly)
        for ch, x, wd, phi, _ in element_quadrature(space, straight):
            assert np.max(np.abs(c[space.l2g[ch]] @ phi.T - poly(x))) < 1e-12


@pytest.mark.parametrize("p", [1, 2])
def test_interpolation_rates(p):
    hs, e0, e1 = [], [], []
    exact = lambda x: (np.sin(x[..., 0]), np.stack([np.cos(x[..., 0]), 0 * x[..., 0]], -1))  # noqa: E731
    for h in (0.2, 0.1, 0.05, 0.025):
        space = fem.FeSpace(fem.build_mesh("dirichlet_disk", 0.5, 1.0, h), p)
        c = fem.interpolate(space, lambda x: np.sin(x[..., 0]))
        a, b = fem.l2_h1_errors(space, c, exact)
        hs.append(space.mesh.h)
        e0.append(a)
        e1.append(b)
    s0 = np.polyfit(np.log(hs), np.log(e0), 1)[0]
    s1 = np.polyfit(np.log(hs), np.log(e1), 1)[0]
    assert abs(s0 - (p + 1)) <= 0.2
    assert abs(s1 - p) <= 0.2


def test_interpolation_degree_contract():
    space = fem.FeSpace(fem.build_mesh("dirichlet_disk", 0.5, 1.0, 0.2), 2)
    with pytest.raises(ContractError):
        fem.interpolate(space, lambda x: x[..., 0], degree=3)


def test_h1k_norm_values(rng):
    mesh = fem.build_mesh("penetrable_disk", 0.5, 1.0, 0.1)
    space = fem.FeSpace(mesh, 2)
    assert fem.h1k_norm(space, np.zeros(space.ndof), 4.0) == 0
    g = 0.3 - 0.4j
    val = fem.h1k_norm(space, np.full(space.ndof, g), 4.0, region=REGION_INNER)
    assert val == pytest.approx(4.0 * abs(g) * math.sqrt(math.pi * 0.25), rel=1e-10)
    p1 = fem.FeSpace(mesh, 1)
    u = rng.standard_normal(p1.ndof) + 1j * rng.standard_normal(p1.ndof)
    K, M = assemble_stiffness_mass(p1, UNIT)
    direct = math.sqrt(np.real(np.vdot(u, (K + 16 * M) @ u)))
    assert fem.h1k_norm(p1, u, 4.0) == pytest.approx(direct, rel=1e-12)
    with pytest.raises(ConfigurationError):
        fem.h1k_norm(fem.FeSpace(fem.build_mesh("dirichlet_disk", 0.5, 1.0, 0.2), 1),
                     np.zeros(10), 1.0, region=REGION_INNER)
