"""Lagrange elements of degree p on the reference triangle.

Nodes are equispaced.  The nodal basis is built by inverting a Vandermonde
matrix in the Legendre product basis P_i(2x-1) P_j(2y-1), i + j <= p, which
stays well conditioned for the degrees used here.
"""
from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre

# local edge e joins vertex e to vertex (e + 1) % 3
EDGES = ((0, 1), (1, 2), (2, 0))
VERTS = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def reference_nodes(p):
    """Vertices, then p-1 nodes per edge, then interior nodes."""
    nodes = [VERTS[0], VERTS[1], VERTS[2]]
    for a, b in EDGES:
        for j in range(1, p):
            nodes.append(VERTS[a] + (j / p) * (VERTS[b] - VERTS[a]))
    for j in range(1, p):
        for i in range(1, p - j):
            nodes.append(np.array([i / p, j / p]))
    return np.array(nodes)


def _modes(p):
    return [(i, j) for i in range(p + 1) for j in range(p + 1 - i)]


def _leg(n, t):
    c = np.zeros(n + 1)
    c[n] = 1.0
    return legendre.legval(t, c), 2.0 * legendre.legval(t, legendre.legder(c))


def _modal(p, pts):
    """Values and gradients of the Legendre product basis at pts."""
    x = 2.0 * pts[:, 0] - 1.0
    y = 2.0 * pts[:, 1] - 1.0
    modes = _modes(p)
    V = np.empty((len(pts), len(modes)))
    Gx = np.empty_like(V)
    Gy = np.empty_like(V)
    for m, (i, j) in enumerate(modes):
        pi, dpi = _leg(i, x)
        pj, dpj = _leg(j, y)
        V[:, m] = pi * pj
        Gx[:, m] = dpi * pj
        Gy[:, m] = pi * dpj
    return V, Gx, Gy


class LagrangeElement:
    def __init__(self, p):
        if p < 1:
            raise ValueError("degree must be >= 1")
        self.p = p
        self.nodes = reference_nodes(p)
        self.ndof = len(self.nodes)
        V, _, _ = _modal(p, self.nodes)
        self._coef = np.linalg.inv(V)
        self.n_edge = p - 1
        self.n_interior = self.ndof - 3 - 3 * (p - 1)

    def eval(self, pts):
        """Basis values (npts, ndof) and gradients (npts, ndof, 2)."""
        pts = np.atleast_2d(pts)
        V, Gx, Gy = _modal(self.p, pts)
        phi = V @ self._coef
        grad = np.stack([Gx @ self._coef, Gy @ self._coef], axis=-1)
        return phi, grad

    def edge_local_nodes(self, e):
        """Local node indices along edge e, from its first to second vertex."""
        a, b = EDGES[e]
        start = 3 + e * (self.p - 1)
        return [a] + list(range(start, start + self.p - 1)) + [b]


@lru_cache(maxsize=None)
def lagrange(p):
    return LagrangeElement(p)
