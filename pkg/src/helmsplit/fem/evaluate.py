"""Point evaluation, interpolation, weighted norms and projections."""
import math

import numpy as np
import scipy.sparse.linalg as spla
from scipy.spatial import cKDTree

from ..errors import ConfigurationError, ContractError, GeometryError
from .assembly import assemble_stiffness_mass, element_quadrature, Coefficients, Field
from .geometry import det_inv, map_elements


def interpolate(space, fun, degree=None):
    """Nodal interpolant of a callable fun(x) -> values at points (..., 2).

    ``degree`` (ell <= p) interpolates with the degree-ell nodes and embeds
    the result in the degree-p space.
    """
    p = space.p
    if degree is not None and degree != p:
        if degree > p:
            raise ContractError("interpolation degree %d exceeds p = %d" % (degree, p))
        from .space import FeSpace

        coarse = FeSpace(space.mesh, degree, space.dirichlet, space.quad_order)
        return prolong(coarse, space, interpolate(coarse, fun))
    x = space.node_points()
    vals = np.asarray(fun(x), dtype=complex)
    vals[space.fixed] = 0.0
    return vals


def prolong(coarse, fine, coeffs):
    """Express a degree-q field in a degree-p space on the same mesh (q <= p)."""
    phi, _ = coarse.element.eval(fine.element.nodes)  # (nloc_f, nloc_c)
    loc = coeffs[coarse.l2g] @ phi.T  # (nt, nloc_f)
    out = np.zeros(fine.ndof, dtype=complex)
    out[fine.l2g] = loc
    return out


def h1k_norm(space, coeffs, k, region=None):
    """(||grad u||^2 + k^2 ||u||^2)^{1/2} over the mesh (or a region tag)."""
    if region is not None and region not in set(np.unique(space.mesh.tags)):
        raise ConfigurationError("region %r not present in the mesh" % (region,))
    tot = 0.0
    elems = None if region is None else np.nonzero(space.mesh.tags == region)[0]
    for ch, x, wd, phi, grad in element_quadrature(space, elems):
        c = coeffs[space.l2g[ch]]
        u = c @ phi.T
        g = np.einsum("ea,eqai->eqi", c, grad)
        tot += np.sum(wd * (np.sum(np.abs(g) ** 2, -1) + k * k * np.abs(u) ** 2))
    return float(np.sqrt(tot))


def norms_against(space, coeffs, exact, k):
    """Weighted H^1 norm of (exact - u_h) and of exact.

    ``exact(x)`` returns (value, gradient) at points of shape (..., 2).
    """
    err = ref = 0.0
    for ch, x, wd, phi, grad in element_quadrature(space):
        c = coeffs[space.l2g[ch]]
        u = c @ phi.T
        g = np.einsum("ea,eqai->eqi", c, grad)
        ue, ge = exact(x)
        err += np.sum(wd * (np.sum(np.abs(ge - g) ** 2, -1) + k * k * np.abs(ue - u) ** 2))
        ref += np.sum(wd * (np.sum(np.abs(ge) ** 2, -1) + k * k * np.abs(ue) ** 2))
    return float(np.sqrt(err)), float(np.sqrt(ref))


def l2_h1_errors(space, coeffs, exact):
    """L2 error and H1 seminorm error against exact (value, gradient)."""
    e0 = e1 = 0.0
    for ch, x, wd, phi, grad in element_quadrature(space):
        c = coeffs[space.l2g[ch]]
        u = c @ phi.T
        g = np.einsum("ea,eqai->eqi", c, grad)
        ue, ge = exact(x)
        e0 += np.sum(wd * np.abs(ue - u) ** 2)
        e1 += np.sum(wd * np.sum(np.abs(ge - g) ** 2, -1))
    return float(np.sqrt(e0)), float(np.sqrt(e1))


class H1kProjector:
    """Orthogonal projection onto the (constrained) space in the H^1_k product."""

    def __init__(self, space, k):
        self.space = space
        self.k = k
        unit = Coefficients({"default": 1.0}, {"default": 1.0})
        K, M = assemble_stiffness_mass(space, unit, check=False)
        self.K, self.M = K, M
        f = space.free
        self.G = (K + k * k * M).tocsr()
        self._lu = spla.splu(self.G[f][:, f].tocsc())

    def project_function(self, exact):
        """Coefficients of the best approximation to a callable (value, gradient)."""
        sp_ = self.space
        b = np.zeros(sp_.ndof, complex)
        for ch, x, wd, phi, grad in element_quadrature(sp_):
            ue, ge = exact(x)
            loc = np.einsum("eq,eqi,eqai->ea", wd, ge, grad) + self.k ** 2 * np.einsum(
                "eq,eq,qa->ea", wd, ue, phi
            )
            np.add.at(b, sp_.l2g[ch], loc)
        return self.project_load(b)

    def project_load(self, b):
        f = self.space.free
        out = np.zeros(self.space.ndof, complex)
        out[f] = self._lu.solve(b[f].real) + 1j * self._lu.solve(b[f].imag)
        return out

    def norm(self, c):
        return float(np.sqrt(max(np.real(np.vdot(c, self.G @ c)), 0.0)))


class PointLocator:
    """Locate physical points in a mesh and evaluate fields there."""

    def __init__(self, mesh):
        self.mesh = mesh
        xy = mesh.elem_xy
        cen = xy.mean(axis=1)
        self.L = mesh.period
        if self.L:
            cen = (cen + self.L) % (2 * self.L) - self.L
            self.tree = cKDTree(cen + self.L, boxsize=2 * self.L)
        else:
            self.tree = cKDTree(cen)
        self.centroids = cen

    def _wrap_to(self, pts, elems):
        if not self.L:
            return pts
        L = self.L
        c = self.mesh.elem_xy[elems].mean(axis=1)
        d = pts - c
        d = (d + L) % (2 * L) - L
        return c + d

    def locate(self, pts, k_candidates=12, tol=1e-10):
        """Element index and reference coordinates for every point."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        q = (pts + self.L) % (2 * self.L) if self.L else pts
        _, cand = self.tree.query(q, k=k_candidates)
        elem = -np.ones(len(pts), dtype=np.int64)
        ref = np.zeros((len(pts), 2))
        todo = np.arange(len(pts))
        for j in range(k_candidates):
            if todo.size == 0:
                break
            e = cand[todo, j]
            x = self._wrap_to(pts[todo], e)
            r = self._invert(e, x)
            lam = np.column_stack([1 - r[:, 0] - r[:, 1], r])
            ok = np.all(lam >= -1e-9, axis=1)
            elem[todo[ok]] = e[ok]
            ref[todo[ok]] = r[ok]
            todo = todo[~ok]
        if todo.size:
            raise GeometryError("%d points lie outside the mesh" % todo.size)
        return elem, ref

    def _invert(self, elems, x):
        xy = self.mesh.elem_xy[elems]
        A = np.stack([xy[:, 1] - xy[:, 0], xy[:, 2] - xy[:, 0]], axis=-1)
        r = np.linalg.solve(A, (x - xy[:, 0])[..., None])[..., 0]
        idx = np.nonzero(self.mesh.curved_edge[elems] >= 0)[0]
        for _ in range(30):
            if idx.size == 0:
                break
            X, Jm = map_elements(self.mesh, elems[idx], r[idx][:, None, :])
            step = np.linalg.solve(Jm[:, 0], (x[idx] - X[:, 0])[..., None])[..., 0]
            r[idx] += step
            idx = idx[np.linalg.norm(step, axis=1) > 1e-14]
        return r

    def evaluate(self, space, coeffs, pts, gradient=False):
        """Values (and gradients) of a field at arbitrary physical points."""
        elem, ref = self.locate(pts)
        return evaluate_at(space, coeffs, elem, ref, gradient)


def evaluate_at(space, coeffs, elem, ref, gradient=False):
    """Evaluate a field at given (element, reference point) pairs."""
    phi, dphi = space.element.eval(ref)
    c = coeffs[space.l2g[elem]]
    vals = np.einsum("na,na->n", phi, c)
    if not gradient:
        return vals
    _, J = map_elements(space.mesh, elem, ref[:, None, :])
    _, inv = det_inv(J[:, 0])
    g = np.einsum("nji,naj->nai", inv, dphi)
    return vals, np.einsum("nai,na->ni", g, c)


def _monomials(p):
    return [(i, m - i) for m in range(p + 1) for i in range(m, -1, -1)]


def _mono_vander(xi, exps, alpha=(0, 0)):
    """Derivatives d^alpha of the monomials xi^(i, j) at points xi (..., 2)."""
    a1, a2 = alpha
    cols = []
    for i, j in exps:
        if i < a1 or j < a2:
            cols.append(np.zeros(xi.shape[:-1]))
            continue
        c = math.perm(i, a1) * math.perm(j, a2)
        cols.append(c * xi[..., 0] ** (i - a1) * xi[..., 1] ** (j - a2))
    return np.stack(cols, -1)


def derivative_gram(space, coeffs, alpha, weight=None, chunk=500):
    """G = U^H D^H W D U for the physical derivative d^alpha of the columns of U.

    Inside each element the field is refitted as a polynomial of degree p in
    the physical coordinates through its nodal values (exact on straight
    elements), so derivatives of any order <= p are available elementwise.
    ``weight(x)`` multiplies the quadrature weights (e.g. a squared cutoff).
    """
    mesh, p = space.mesh, space.p
    if sum(alpha) > p:
        raise ContractError("derivative order %d exceeds degree %d" % (sum(alpha), p))
    exps = _monomials(p)
    U = np.asarray(coeffs)
    if U.ndim == 1:
        U = U[:, None]
    G = np.zeros((U.shape[1], U.shape[1]), dtype=np.result_type(U.dtype, float))
    xq_ref, wq = space.quadrature()
    diam = mesh.diameters()
    for s in range(0, mesh.n_elements, chunk):
        el = np.arange(s, min(mesh.n_elements, s + chunk))
        Xn, _ = map_elements(mesh, el, space.element.nodes)
        Xq, Jq = map_elements(mesh, el, xq_ref)
        det, _ = det_inv(Jq)
        xc = Xn.mean(axis=1, keepdims=True)
        he = diam[el][:, None, None]
        V = _mono_vander((Xn - xc) / he, exps)  # (ne, nloc, nloc)
        Dq = _mono_vander((Xq - xc) / he, exps, alpha) / he ** sum(alpha)
        Dloc = np.linalg.solve(V.transpose(0, 2, 1), Dq.transpose(0, 2, 1)).transpose(0, 2, 1)
        w = np.abs(det) * wq
        if weight is not None:
            w = w * weight(Xq)
        vals = np.einsum("eqa,ean->eqn", Dloc, U[space.l2g[el]])
        B = (np.sqrt(w)[..., None] * vals).reshape(-1, U.shape[1])
        G += B.conj().T @ B
    return G
