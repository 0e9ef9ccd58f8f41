"""Triangulations of annuli, disks and the periodic square.

Every edge lying on one of the named circles (obstacle, interface, outer
truncation circle) is flagged as curved, and the geometry map in
``geometry.py`` bends it exactly onto its circle.

Periodic meshes keep, for each element, the unwrapped coordinates of its
three vertices (``elem_xy``); vertex indices refer to the identified points
of the fundamental cell.
"""
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import Delaunay

from ..errors import GeometryError

REGION_OUTER = 0
REGION_INNER = 1


@dataclass
class Mesh:
    points: np.ndarray          # (np, 2)
    tris: np.ndarray            # (nt, 3), counter-clockwise
    tags: np.ndarray            # (nt,) region tag
    curved_radius: np.ndarray   # (nt,) radius of the curved edge, 0 if straight
    curved_edge: np.ndarray     # (nt,) local edge index of the curved edge, -1 if none
    circles: dict = field(default_factory=dict)   # name -> radius
    period: float = 0.0         # half-period L of the square [-L, L)^2, 0 if none
    offsets: np.ndarray | None = None  # (nt, 3, 2) integer image shifts

    @property
    def elem_xy(self):
        xy = self.points[self.tris]
        if self.offsets is not None:
            xy = xy + 2.0 * self.period * self.offsets
        return xy

    @property
    def n_elements(self):
        return len(self.tris)

    def diameters(self):
        xy = self.elem_xy
        d = [np.linalg.norm(xy[:, a] - xy[:, b], axis=1) for a, b in ((0, 1), (1, 2), (2, 0))]
        return np.max(d, axis=0)

    @property
    def h(self):
        return float(self.diameters().max())

    def quasi_uniformity(self):
        d = self.diameters()
        return float(d.max() / d.min())

    def signed_areas(self):
        xy = self.elem_xy
        a = xy[:, 1] - xy[:, 0]
        b = xy[:, 2] - xy[:, 0]
        return 0.5 * (a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])

    def boundary_edges(self, name):
        """(element, local edge) pairs of curved edges on the named circle."""
        r = self.circles[name]
        on = np.isclose(self.curved_radius, r, rtol=1e-12, atol=0.0) & (self.curved_edge >= 0)
        elems = np.nonzero(on)[0]
        if name == "interface":
            # both sides carry the edge; keep the outer one
            elems = elems[self.tags[elems] == REGION_OUTER]
        return elems, self.curved_edge[elems]

    # --- plain-text import/export -------------------------------------
    def save(self, path):
        with open(path, "w") as fh:
            fh.write("helmsplit-mesh 1\n")
            fh.write("period %.17g\n" % self.period)
            fh.write("circles %d\n" % len(self.circles))
            for name, r in sorted(self.circles.items()):
                fh.write("%s %.17g\n" % (name, r))
            fh.write("nodes %d\n" % len(self.points))
            for x, y in self.points:
                fh.write("%.17g %.17g\n" % (x, y))
            fh.write("elements %d\n" % len(self.tris))
            offs = self.offsets if self.offsets is not None else np.zeros((len(self.tris), 3, 2), int)
            for t in range(len(self.tris)):
                row = list(self.tris[t]) + [self.tags[t], self.curved_edge[t]]
                row += list(offs[t].ravel())
                fh.write(" ".join(str(int(v)) for v in row))
                fh.write(" %.17g\n" % self.curved_radius[t])

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            lines = [ln.split() for ln in fh if ln.strip()]
        if lines[0] != ["helmsplit-mesh", "1"]:
            raise GeometryError("not a helmsplit mesh file")
        period = float(lines[1][1])
        nc = int(lines[2][1])
        circles = {ln[0]: float(ln[1]) for ln in lines[3 : 3 + nc]}
        pos = 3 + nc
        npt = int(lines[pos][1])
        pts = np.array([[float(a), float(b)] for a, b in lines[pos + 1 : pos + 1 + npt]])
        pos += 1 + npt
        nt = int(lines[pos][1])
        rows = lines[pos + 1 : pos + 1 + nt]
        ints = np.array([[int(v) for v in r[:-1]] for r in rows], dtype=np.int64).reshape(nt, -1)
        rad = np.array([float(r[-1]) for r in rows])
        offs = ints[:, 5:11].reshape(nt, 3, 2)
        return cls(
            points=pts,
            tris=ints[:, :3],
            tags=ints[:, 3],
            curved_radius=rad,
            curved_edge=ints[:, 4],
            circles=circles,
            period=period,
            offsets=offs if period > 0 else None,
        )


# ---------------------------------------------------------------------------
# concentric ring meshes


def _ring(r, n, phase=0.0):
    th = phase + 2 * np.pi * np.arange(n) / n
    return np.column_stack([r * np.cos(th), r * np.sin(th)]), th % (2 * np.pi)


def _zip_rings(ia, tha, ib, thb):
    """Triangulate the band between two closed rings (indices, angles)."""
    na, nb = len(ia), len(thb)
    # walk both rings in angle, starting near angle 0
    oa = np.argsort(tha)
    ob = np.argsort(thb)
    ia, tha = ia[oa], tha[oa]
    ib, thb = ib[ob], thb[ob]
    tris = []
    i = j = 0
    while i < na or j < nb:
        a0, a1 = ia[i % na], ia[(i + 1) % na]
        b0, b1 = ib[j % nb], ib[(j + 1) % nb]
        ta = tha[(i + 1) % na] + 2 * np.pi * ((i + 1) // na)
        tb = thb[(j + 1) % nb] + 2 * np.pi * ((j + 1) // nb)
        if j >= nb or (i < na and ta <= tb):
            tris.append((a0, a1, b0))
            i += 1
        else:
            tris.append((a0, b1, b0))
            j += 1
    return tris


def _orient(points, tris):
    tris = np.asarray(tris, dtype=np.int64)
    xy = points[tris]
    a = xy[:, 1] - xy[:, 0]
    b = xy[:, 2] - xy[:, 0]
    neg = (a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]) < 0
    tris[neg] = tris[neg][:, [0, 2, 1]]
    return tris


def _ring_radii(r_in, r_out, dr):
    m = max(1, int(math.ceil((r_out - r_in) / dr)))
    return list(np.linspace(r_in, r_out, m + 1))


def _mark_curves(points, tris, circles):
    nt = len(tris)
    cr = np.zeros(nt)
    ce = -np.ones(nt, dtype=np.int64)
    rad = np.hypot(points[:, 0], points[:, 1])
    for e, (a, b) in enumerate(((0, 1), (1, 2), (2, 0))):
        ra = rad[tris[:, a]]
        rb = rad[tris[:, b]]
        for r in circles.values():
            on = np.isclose(ra, r, rtol=1e-12) & np.isclose(rb, r, rtol=1e-12)
            if np.any(on & (ce >= 0)):
                raise GeometryError("element with two curved edges; refine the mesh")
            cr[on] = r
            ce[on] = e
    return cr, ce


def _concentric(radii_list, s, center_fan=False):
    """Mesh the union of consecutive ring bands; returns points, tris, ring ids."""
    pts = []
    rings = []
    count = 0
    for r in radii_list:
        if r == 0.0:
            pts.append(np.zeros((1, 2)))
            rings.append((np.array([count]), np.array([0.0])))
            count += 1
            continue
        n = max(6, int(math.ceil(2 * np.pi * r / s)))
        # stagger alternate rings to keep triangles close to equilateral
        phase = np.pi / n * (len(rings) % 2)
        p, th = _ring(r, n, phase)
        pts.append(p)
        rings.append((np.arange(count, count + n), th))
        count += n
    pts = np.vstack(pts)
    tris = []
    for (ia, tha), (ib, thb) in zip(rings[:-1], rings[1:]):
        if len(ia) == 1:
            n = len(ib)
            order = np.argsort(thb)
            ring = ib[order]
            for j in range(n):
                tris.append((ia[0], ring[j], ring[(j + 1) % n]))
        else:
            tris.extend(_zip_rings(ia, tha, ib, thb))
    return pts, tris


def build_mesh(geometry, R0, R, h_target, seed=0, max_tries=30):
    """Curved triangulation of B_R minus the obstacle, or of all of B_R.

    geometry: "dirichlet_disk" (annulus R0 < r < R, obstacle removed) or
    "penetrable_disk" (the disk r < R with an interface circle r = R0).
    ``seed`` is accepted for interface uniformity; construction is
    deterministic and does not use randomness.
    """
    if not 0 < R0 < R:
        raise GeometryError("need 0 < R0 < R")
    if h_target <= 0 or h_target >= R - R0:
        raise GeometryError("h_target must lie in (0, R - R0)")
    scale = 1.0
    for _ in range(max_tries):
        s = scale * h_target
        dr = s * math.sqrt(3) / 2
        if geometry == "dirichlet_disk":
            radii = _ring_radii(R0, R, dr)
            if len(radii) < 3:
                radii = list(np.linspace(R0, R, 3))
            pts, tris = _concentric(radii, s)
            circles = {"inner": R0, "outer": R}
        elif geometry == "penetrable_disk":
            inner = _ring_radii(0.0, R0, dr)
            outer = _ring_radii(R0, R, dr)
            if len(outer) < 3:
                outer = list(np.linspace(R0, R, 3))
            if len(inner) < 3:
                inner = list(np.linspace(0.0, R0, 3))
            radii = inner + outer[1:]
            pts, tris = _concentric(radii, s)
            circles = {"interface": R0, "outer": R}
        else:
            raise GeometryError("unknown geometry %r" % (geometry,))
        tris = _orient(pts, tris)
        cr, ce = _mark_curves(pts, tris, circles)
        cen = pts[tris].mean(axis=1)
        tags = np.where(np.hypot(cen[:, 0], cen[:, 1]) < R0, REGION_INNER, REGION_OUTER)
        mesh = Mesh(pts, tris, tags, cr, ce, circles)
        if mesh.h <= h_target:
            return mesh
        scale *= 0.95
    raise GeometryError("could not reach h <= %g" % h_target)


# ---------------------------------------------------------------------------
# periodic square with an optional circle


def _structured_periodic(L, n):
    s = 2 * L / n
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    pts = np.column_stack([(-L + s * i).ravel(), (-L + s * j).ravel()])

    def vid(a, b):
        return (a % n) * n + (b % n)

    tris = []
    offs = []
    for a in range(n):
        for b in range(n):
            quad = [(a, b), (a + 1, b), (a + 1, b + 1), (a, b + 1)]
            for t in ((0, 1, 2), (0, 2, 3)):
                tris.append([vid(*quad[m]) for m in t])
                offs.append([[quad[m][0] // n, quad[m][1] // n] for m in t])
    return pts, np.array(tris), np.array(offs)


def build_torus_mesh(L, h_target, R0=None, contents="flat", band_layers=3):
    """Periodic mesh of [-L, L)^2.

    contents: "flat" (no circle), "dirichlet_disk" (hole r < R0 removed)
    or "penetrable_disk" (interface circle r = R0, both sides meshed).
    """
    if contents == "flat":
        n = int(math.ceil(2 * L / h_target * math.sqrt(0.5)))
        while True:
            pts, tris, offs = _structured_periodic(L, n)
            mesh = Mesh(pts, tris, np.zeros(len(tris), np.int64), np.zeros(len(tris)),
                        -np.ones(len(tris), np.int64), {}, L, offs)
            if mesh.h <= h_target:
                return mesh
            n += 1
    if R0 is None or not 0 < R0 < 0.8 * L:
        raise GeometryError("need 0 < R0 < 0.8 L")
    s = h_target / 1.3
    for _ in range(40):
        dr = s * math.sqrt(3) / 2
        n_c = max(12, int(math.ceil(2 * np.pi * R0 / s)))
        radii = [R0 + j * dr for j in range(0, band_layers + 1)]
        if contents == "penetrable_disk":
            radii = [R0 - j * dr for j in range(band_layers, 0, -1) if R0 - j * dr > 0.5 * s] + radii
        pts = []
        for m, r in enumerate(radii):
            n_r = max(6, int(round(n_c * r / R0)))
            jring = round((r - R0) / dr)
            p, _ = _ring(r, n_r, np.pi / n_r * (jring % 2))
            pts.append(p)
        ring_pts = np.vstack(pts)
        r_hi = radii[-1] + 0.6 * s
        r_lo = radii[0] - 0.6 * s
        ng = int(math.ceil(2 * L / s))
        g = -L + (2 * L / ng) * np.arange(ng)
        GX, GY = np.meshgrid(g, g, indexing="ij")
        grid = np.column_stack([GX.ravel(), GY.ravel()])
        rg = np.hypot(grid[:, 0], grid[:, 1])
        keep = rg > r_hi
        if contents == "penetrable_disk":
            keep |= rg < r_lo
        base = np.vstack([ring_pts, grid[keep]])
        nb = len(base)
        # periodic images inside a margin around the cell
        margin = 3 * s
        images = [base]
        shifts = [np.zeros((nb, 2), np.int64)]
        ids = [np.arange(nb)]
        for sx in (-1, 0, 1):
            for sy in (-1, 0, 1):
                if sx == 0 and sy == 0:
                    continue
                q = base + 2 * L * np.array([sx, sy])
                near = (np.abs(q[:, 0]) < L + margin) & (np.abs(q[:, 1]) < L + margin)
                images.append(q[near])
                shifts.append(np.tile([sx, sy], (near.sum(), 1)))
                ids.append(np.nonzero(near)[0])
        allp = np.vstack(images)
        shift = np.vstack(shifts)
        idx = np.concatenate(ids)
        tri = Delaunay(allp).simplices
        cen = allp[tri].mean(axis=1)
        inside = (cen[:, 0] >= -L) & (cen[:, 0] < L) & (cen[:, 1] >= -L) & (cen[:, 1] < L)
        tri = tri[inside]
        cen = cen[inside]
        if contents == "dirichlet_disk":
            tri = tri[np.hypot(cen[:, 0], cen[:, 1]) > R0]
        tri = _orient(allp, tri)
        gtris = idx[tri]
        offs = shift[tri]
        circ_name = "inner" if contents == "dirichlet_disk" else "interface"
        circles = {circ_name: R0}
        cr, ce = _mark_curves(allp, tri, circles)
        cen = allp[tri].mean(axis=1)
        tags = np.where(np.hypot(cen[:, 0], cen[:, 1]) < R0, REGION_INNER, REGION_OUTER)
        mesh = Mesh(base.copy(), gtris, tags, cr, ce, circles, L, offs)
        # every chord between consecutive circle points must be an edge
        n_curved = int(np.sum(ce >= 0))
        expected = n_c if contents == "dirichlet_disk" else 2 * n_c
        if n_curved != expected:
            raise GeometryError("circle edges were not recovered by the triangulation")
        if abs(mesh.signed_areas().sum() - (4 * L * L - (np.pi * R0 ** 2 if contents == "dirichlet_disk" else 0))) > 0.05 * L * L:
            raise GeometryError("periodic triangulation does not tile the cell")
        if mesh.h <= h_target:
            return mesh
        s *= 0.95
    raise GeometryError("could not reach h <= %g" % h_target)
