"""Assembly of the Helmholtz sesquilinear form with the DtN boundary term.

    a(u, v) = int A grad u . grad v - k^2 n u v  -  <DtN u, v>_{r=R}

with n = 1/c^2 (times 1/beta inside a penetrable obstacle, whose stiffness
also carries 1/beta).  The DtN block is low rank in the modal trace matrix
C (C[n, j] = (1/2pi) int phi_j e^{-in theta} d theta), so the system is
solved in the augmented sparse form

    [ K - k^2 M     -2 pi R C^H D ] [u]   [F]
    [ C              -I           ] [y] = [0]

instead of forming the dense boundary block.
"""
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..errors import ConfigurationError, DataError, SolverError
from .element import EDGES
from .geometry import det_inv, map_elements
from .mesh import REGION_INNER, REGION_OUTER
from .quadrature import gauss_interval

CHUNK = 4000


# ---------------------------------------------------------------------------
# coefficients


def _region_value(spec, x, region):
    v = spec.get(region, spec.get("default"))
    if v is None:
        raise ConfigurationError("no coefficient for region %d" % region)
    if callable(v):
        return np.asarray(v(x))
    return np.broadcast_to(np.asarray(v, dtype=float), x.shape[:-1] + np.shape(v))


@dataclass
class Coefficients:
    """Per-region stiffness (scalar or 2x2) and mass weights.

    ``stiffness`` and ``mass`` map region tags to constants or callables of
    the physical points (shape (..., 2)).
    """

    stiffness: dict
    mass: dict
    label: str = ""
    record: dict = field(default_factory=dict)

    @classmethod
    def dirichlet(cls, A=1.0, c=1.0):
        return cls({"default": A}, {"default": 1.0 / c ** 2} if not callable(c)
                   else {"default": lambda x: 1.0 / c(x) ** 2},
                   "dirichlet", {"A": A, "c": c})

    @classmethod
    def transmission(cls, c=1.0, beta=1.0):
        return cls(
            {REGION_OUTER: 1.0, REGION_INNER: 1.0 / beta},
            {REGION_OUTER: 1.0, REGION_INNER: 1.0 / (beta * c * c)},
            "transmission",
            {"c": c, "beta": beta},
        )

    def stiff_at(self, x, region):
        return _region_value(self.stiffness, x, region)

    def mass_at(self, x, region):
        return _region_value(self.mass, x, region)

    def bounds(self, mesh, npts=7):
        """(A_min, A_max, n_max) sampled over element quadrature points."""
        from .quadrature import triangle_rule

        pts, _ = triangle_rule(npts)
        amin, amax, nmax = np.inf, 0.0, 0.0
        for reg in np.unique(mesh.tags):
            elems = np.nonzero(mesh.tags == reg)[0]
            x, _ = map_elements(mesh, elems, pts)
            a = self.stiff_at(x, reg)
            if a.ndim == x.ndim:  # matrix valued
                ev = np.linalg.eigvalsh(a)
                amin = min(amin, ev.min())
                amax = max(amax, ev.max())
            else:
                amin = min(amin, a.min())
                amax = max(amax, a.max())
            nmax = max(nmax, self.mass_at(x, reg).max())
        return float(amin), float(amax), float(nmax)


def _check_elliptic(a, x):
    if a.ndim == x.ndim:
        ev = np.linalg.eigvalsh(0.5 * (a + np.swapaxes(a, -1, -2)))
        bad = ev[..., 0] <= 0
    else:
        bad = a <= 0
    if np.any(bad):
        i = np.argwhere(bad)[0]
        pt = x[tuple(i)]
        raise DataError("coefficient not elliptic at point (%.6g, %.6g)" % (pt[0], pt[1]))


# ---------------------------------------------------------------------------
# element loops


def element_quadrature(space, elems=None, order=None):
    """Yield per-chunk quadrature data.

    (elems, x (ne,nq,2), wdet (ne,nq), phi (nq,nloc), grad (ne,nq,nloc,2))
    """
    from .quadrature import triangle_rule

    mesh = space.mesh
    if elems is None:
        elems = np.arange(mesh.n_elements)
    pts, w = triangle_rule(space.quad_order if order is None else order)
    phi, dphi = space.element.eval(pts)
    for s in range(0, len(elems), CHUNK):
        ch = elems[s : s + CHUNK]
        x, J = map_elements(mesh, ch, pts)
        det, inv = det_inv(J)
        # physical gradient: J^{-T} grad_ref
        grad = np.einsum("eqji,qbj->eqbi", inv, dphi)
        yield ch, x, w[None, :] * np.abs(det), phi, grad


def _scatter(space, elems, local, shape=None):
    l2g = space.l2g[elems]
    nloc = l2g.shape[1]
    rows = np.repeat(l2g, nloc, axis=1).ravel()
    cols = np.tile(l2g, (1, nloc)).ravel()
    n = space.ndof if shape is None else shape
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def assemble_stiffness_mass(space, coeffs, stiff_scale=1.0, check=True):
    """Real sparse K (weighted stiffness) and M (weighted mass), full numbering."""
    mesh = space.mesh
    Ks, Ms = [], []
    for reg in np.unique(mesh.tags):
        elems = np.nonzero(mesh.tags == reg)[0]
        for ch, x, wd, phi, grad in element_quadrature(space, elems):
            a = coeffs.stiff_at(x, reg)
            if check:
                _check_elliptic(a, x)
            n = coeffs.mass_at(x, reg)
            if a.ndim == x.ndim:
                Ag = np.einsum("eqij,eqbj->eqbi", a, grad)
                Ke = np.einsum("eq,eqai,eqbi->eab", wd, grad, Ag)
            else:
                Ke = np.einsum("eq,eqai,eqbi->eab", wd * a, grad, grad)
            Me = np.einsum("eq,qa,qb->eab", wd * n, phi, phi)
            Ks.append(_scatter(space, ch, stiff_scale * Ke))
            Ms.append(_scatter(space, ch, Me))
    K = sum(Ks[1:], Ks[0]).tocsr()
    M = sum(Ms[1:], Ms[0]).tocsr()
    return K, M


def edge_points(space, elems, local_edges, npts):
    """Reference points, physical points, angles and arc weights on curved edges."""
    t, wt = gauss_interval(npts)
    out_ref = np.empty((len(elems), npts, 2))
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    for e, (a, b) in enumerate(EDGES):
        sel = local_edges == e
        out_ref[sel] = verts[a] + t[:, None] * (verts[b] - verts[a])
    return out_ref, t, wt


def boundary_trace_matrix(space, name, n_modes, npts=None):
    """C[n + N, j] = (1/2pi) int_0^{2pi} phi_j(R, theta) e^{-in theta} d theta."""
    mesh = space.mesh
    elems, led = mesh.boundary_edges(name)
    R = mesh.circles[name]
    xy = mesh.elem_xy[elems]
    a_idx = np.array([EDGES[e][0] for e in led])
    b_idx = np.array([EDGES[e][1] for e in led])
    xa = xy[np.arange(len(elems)), a_idx]
    xb = xy[np.arange(len(elems)), b_idx]
    ta = np.arctan2(xa[:, 1], xa[:, 0])
    dt = (np.arctan2(xb[:, 1], xb[:, 0]) - ta + np.pi) % (2 * np.pi) - np.pi
    if npts is None:
        # at least 2p+2 points per edge, more when high modes oscillate across it
        npts = max(space.quad_order // 2 + 1,
                   int(np.ceil(n_modes * np.abs(dt).max() / 2.0)) + space.p + 2)
    t, wt = gauss_interval(npts)
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    nloc = space.element.ndof
    orders = np.arange(-n_modes, n_modes + 1)
    rows, cols, vals = [], [], []
    for e in range(3):
        sel = np.nonzero(led == e)[0]
        if sel.size == 0:
            continue
        a, b = EDGES[e]
        ref = verts[a] + t[:, None] * (verts[b] - verts[a])
        phi, _ = space.element.eval(ref)  # (npts, nloc)
        th = ta[sel, None] + t[None, :] * dt[sel, None]
        wth = np.abs(dt[sel, None]) * wt[None, :] / (2 * np.pi)
        ex = np.exp(-1j * orders[None, None, :] * th[..., None])  # (ns, npts, nm)
        loc = np.einsum("sq,sqm,qa->sma", wth, ex, phi)  # (ns, nm, nloc)
        g = space.l2g[elems[sel]]
        rows.append(np.broadcast_to(np.arange(len(orders))[None, :, None], loc.shape).ravel())
        cols.append(np.broadcast_to(g[:, None, :], loc.shape).ravel())
        vals.append(loc.ravel())
    C = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(len(orders), space.ndof),
    ).tocsr()
    return C


def load_volume(space, f):
    """F_i = int f phi_i for a callable f(x) -> complex."""
    F = np.zeros(space.ndof, dtype=complex)
    for ch, x, wd, phi, _ in element_quadrature(space):
        fe = np.einsum("eq,qa->ea", wd * f(x), phi)
        np.add.at(F, space.l2g[ch], fe)
    return F


def planewave_boundary_data(k, R, dtn, direction):
    """Modal coefficients of d_n u^I - DtN u^I on r = R for u^I = e^{ik x.a}."""
    from .. import specfun

    alpha = np.arctan2(direction[1], direction[0])
    N = dtn.n_dtn
    J, _, dJ, _ = specfun.cyl_table(k * R, N)
    n = dtn.orders
    a = np.abs(n)
    sgn = np.where((n < 0) & (a % 2 == 1), -1.0, 1.0)
    Jn = J[a] * sgn
    dJn = dJ[a] * sgn
    phase = (1j ** (n % 4)) * np.exp(-1j * n * alpha)
    return phase * (k * dJn - dtn.symbols * Jn)


# ---------------------------------------------------------------------------
# systems


@dataclass
class Field:
    space: object
    coeffs: np.ndarray
    name: str = ""


@dataclass
class AssembledSystem:
    space: object
    k: float
    K: sp.csr_matrix
    M: sp.csr_matrix
    C: sp.csr_matrix | None
    dtn: object
    F: np.ndarray
    coeffs: Coefficients
    _lu: object = None
    _lu_h: object = None

    @property
    def free(self):
        return self.space.free

    def matrix(self):
        """The Galerkin matrix on free dofs as a dense-boundary-free operator."""
        return (self.K - self.k ** 2 * self.M)[self.free][:, self.free]

    def _aug(self, hermitian=False):
        f = self.free
        A0 = (self.K - self.k ** 2 * self.M)[f][:, f].astype(complex)
        if self.C is None:
            return (A0.conj().T if hermitian else A0).tocsc()
        Cf = self.C[:, f]
        D = sp.diags(self.dtn.symbols)
        scale = 2 * np.pi * self.dtn.R
        m = Cf.shape[0]
        if not hermitian:
            top = sp.hstack([A0, -scale * (Cf.conj().T @ D)])
            bot = sp.hstack([Cf, -sp.identity(m, format="csr")])
        else:
            # A^H = A0^T - 2 pi R C^H D^H C
            top = sp.hstack([A0.conj().T, -scale * (Cf.conj().T @ D.conj())])
            bot = sp.hstack([Cf, -sp.identity(m, format="csr")])
        return sp.vstack([top, bot]).tocsc()

    def _factor(self, hermitian=False):
        attr = "_lu_h" if hermitian else "_lu"
        if getattr(self, attr) is None:
            try:
                lu = spla.splu(self._aug(hermitian), permc_spec="COLAMD")
            except RuntimeError as exc:
                raise SolverError(
                    "singular Galerkin matrix (k=%g, h=%g, p=%d): %s"
                    % (self.k, self.space.mesh.h, self.space.p, exc)
                ) from exc
            setattr(self, attr, lu)
        return getattr(self, attr)

    def solve_free(self, rhs, hermitian=False):
        lu = self._factor(hermitian)
        m = 0 if self.C is None else self.C.shape[0]
        b = np.concatenate([rhs, np.zeros(m, complex)])
        x = lu.solve(b)
        if not np.all(np.isfinite(x)):
            raise SolverError("non-finite Galerkin solution (k=%g)" % self.k)
        return x[: len(rhs)]

    def apply(self, u, hermitian=False):
        """A u (or A^H u) for full-numbering vectors, restricted to free rows."""
        f = self.free
        uf = np.zeros(self.space.ndof, complex)
        uf[f] = u[f] if len(u) == self.space.ndof else u
        A0 = self.K - self.k ** 2 * self.M
        out = A0 @ uf
        if self.C is not None:
            s = 2 * np.pi * self.dtn.R
            d = self.dtn.symbols.conj() if hermitian else self.dtn.symbols
            out = out - s * (self.C.conj().T @ (d * (self.C @ uf)))
        return out[f]

    def form(self, u, v):
        """a(u, v) = v^H A u for full-numbering coefficient vectors."""
        return np.vdot(v[self.free], self.apply(u))


def assemble(space, coeffs, k, dtn=None, rhs=None, boundary="outer"):
    """Build the system for a(., .) with either volume data or plane-wave data.

    rhs: None, ("volume", f) with f callable, or ("planewave", direction).
    """
    K, M = assemble_stiffness_mass(space, coeffs)
    C = None
    if dtn is not None:
        R = space.mesh.circles[boundary]
        if not np.isclose(R, dtn.R, rtol=1e-12):
            raise ConfigurationError("DtN radius does not match the mesh boundary")
        C = boundary_trace_matrix(space, boundary, dtn.n_dtn)
    F = np.zeros(space.ndof, complex)
    if rhs is not None:
        kind = rhs[0]
        if kind == "volume":
            F = load_volume(space, rhs[1])
        elif kind == "planewave":
            if C is None:
                raise ConfigurationError("plane-wave data needs the DtN boundary")
            g = planewave_boundary_data(k, dtn.R, dtn, rhs[1])
            F = 2 * np.pi * dtn.R * (C.conj().T @ g)
        elif kind == "vector":
            F = np.asarray(rhs[1], dtype=complex)
        else:
            raise ConfigurationError("unknown rhs kind %r" % (kind,))
    return AssembledSystem(space, float(k), K, M, C, dtn, F, coeffs)


def galerkin_solve(system, check_residual=True):
    """Solve A u = F on free dofs; returns the Field in full numbering."""
    f = system.free
    rhs = system.F[f]
    x = system.solve_free(rhs)
    u = np.zeros(system.space.ndof, complex)
    u[f] = x
    if check_residual:
        res = np.linalg.norm(system.apply(u) - rhs)
        nf = np.linalg.norm(rhs)
        if nf > 0 and res > 1e-10 * nf:
            # one step of iterative refinement before giving up
            u[f] += system.solve_free(rhs - system.apply(u))
            res = np.linalg.norm(system.apply(u) - rhs)
            if res > 1e-10 * nf:
                raise SolverError(
                    "Galerkin residual %.3e exceeds tolerance (k=%g, h=%g, p=%d)"
                    % (res / nf, system.k, system.space.mesh.h, system.space.p)
                )
    return Field(system.space, u, "u_N")


def adjoint_solve(system, rhs_free):
    """Solve A^H w = b; w represents S*f when b_i = int f phi_i."""
    w = np.zeros(system.space.ndof, complex)
    w[system.free] = system.solve_free(rhs_free, hermitian=True)
    return w
