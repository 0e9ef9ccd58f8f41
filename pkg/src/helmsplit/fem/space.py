"""Continuous Lagrange spaces: global numbering of degrees of freedom."""
import numpy as np

from .element import EDGES, lagrange
from .quadrature import triangle_rule


class FeSpace:
    """Degree-p continuous space on a mesh.

    ``dirichlet`` names circles whose dofs are constrained to zero (the
    obstacle boundary for the sound-soft problem).  Attributes:

    l2g     (nt, nloc) global dof of every local node
    ndof    total number of dofs, constrained ones included
    free    indices of unconstrained dofs
    """

    def __init__(self, mesh, p, dirichlet=(), quad_order=None):
        self.mesh = mesh
        self.p = int(p)
        self.element = lagrange(self.p)
        self.quad_order = 2 * self.p + 2 if quad_order is None else int(quad_order)
        self.dirichlet = tuple(dirichlet)
        self._number()

    def _number(self):
        mesh, p, el = self.mesh, self.p, self.element
        tris = mesh.tris
        nv = len(mesh.points)
        nt = len(tris)
        # unique undirected edges by sorted global vertex pair
        pairs = np.concatenate([np.sort(tris[:, [a, b]], axis=1) for a, b in EDGES])
        uniq, inv = np.unique(pairs, axis=0, return_inverse=True)
        inv = inv.reshape(3, nt).T
        self.edges = uniq
        self.elem_edges = inv
        ne = len(uniq)
        nedge = p - 1
        nint = el.n_interior
        l2g = np.empty((nt, el.ndof), dtype=np.int64)
        l2g[:, :3] = tris
        for e, (a, b) in enumerate(EDGES):
            base = nv + inv[:, e] * nedge
            forward = tris[:, a] < tris[:, b]
            for j in range(nedge):
                jj = np.where(forward, j, nedge - 1 - j)
                l2g[:, 3 + e * nedge + j] = base + jj
        off = nv + ne * nedge
        for j in range(nint):
            l2g[:, 3 + 3 * nedge + j] = off + np.arange(nt) * nint + j
        self.l2g = l2g
        self.ndof = off + nt * nint
        fixed = np.zeros(self.ndof, dtype=bool)
        for name in self.dirichlet:
            elems, led = mesh.boundary_edges(name)
            for le in range(3):
                sel = elems[led == le]
                if sel.size:
                    loc = el.edge_local_nodes(le)
                    fixed[l2g[np.ix_(sel, loc)].ravel()] = True
        self.fixed = fixed
        self.free = np.nonzero(~fixed)[0]

    @property
    def n_free(self):
        return len(self.free)

    def quadrature(self):
        return triangle_rule(self.quad_order)

    def node_points(self):
        """Physical position of every global dof (periodic images wrapped)."""
        from .geometry import map_elements

        x, _ = map_elements(self.mesh, np.arange(self.mesh.n_elements), self.element.nodes)
        out = np.empty((self.ndof, 2))
        out[self.l2g.ravel()] = x.reshape(-1, 2)
        if self.mesh.period:
            L = self.mesh.period
            out = (out + L) % (2 * L) - L
        return out
