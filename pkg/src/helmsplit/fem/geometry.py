"""Element maps from the reference triangle.

Straight elements use the affine map.  An element with one edge on a
circle centred at the origin uses the transfinite blend

    F(lam) = sum_i lam_i x_i + lam_a lam_b D(s) / (s (1 - s)),   s = (1 + lam_b - lam_a) / 2,

where D(s) is the gap between the circular arc and the chord.  Because s
is affine in the reference coordinates the map is smooth on the closed
element, which keeps quadrature of curved elements spectrally accurate.  The curved
edge then lies exactly on its circle, and the map is independent of the
polynomial degree, so spaces of different degree on one mesh are nested.
"""
import numpy as np

from .element import EDGES

DLAM = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])  # d lambda_i / d(xi, eta)


def _wrap(a):
    return (a + np.pi) % (2 * np.pi) - np.pi


def map_elements(mesh, elems, ref_pts):
    """Physical points (ne, nq, 2) and Jacobians (ne, nq, 2, 2) for ``elems``.

    ``ref_pts`` is (nq, 2), shared by all elements, or (ne, nq, 2).
    ``J[..., i, j] = d x_i / d xi_j``.
    """
    elems = np.asarray(elems)
    ne = len(elems)
    xy = mesh.elem_xy[elems]  # (ne, 3, 2)
    ref_pts = np.asarray(ref_pts, dtype=float)
    if ref_pts.ndim == 2:
        ref_pts = np.broadcast_to(ref_pts, (ne,) + ref_pts.shape)
    lam = np.stack([1.0 - ref_pts[..., 0] - ref_pts[..., 1], ref_pts[..., 0], ref_pts[..., 1]], -1)
    x = np.einsum("eqi,eid->eqd", lam, xy)
    Jl = np.einsum("eid,ij->edj", xy, DLAM)
    J = np.broadcast_to(Jl[:, None], (ne, ref_pts.shape[1], 2, 2)).copy()
    ce = mesh.curved_edge[elems]
    cur = np.nonzero(ce >= 0)[0]
    for e in range(3):
        sel = cur[ce[cur] == e]
        if sel.size == 0:
            continue
        a, b = EDGES[e]
        R = mesh.curved_radius[elems[sel]][:, None]
        xa = xy[sel, a][:, None, :]
        xb = xy[sel, b][:, None, :]
        ta = np.arctan2(xa[..., 1], xa[..., 0])
        dt = _wrap(np.arctan2(xb[..., 1], xb[..., 0]) - ta)
        la = lam[sel, :, a]
        lb = lam[sel, :, b]
        s = np.clip(0.5 * (1.0 + lb - la), 1e-7, 1.0 - 1e-7)
        th = ta + s * dt
        cos, sin = np.cos(th), np.sin(th)
        D = np.stack([R * cos, R * sin], -1) - ((1 - s)[..., None] * xa + s[..., None] * xb)
        Dp = np.stack([-R * dt * sin, R * dt * cos], -1) - (xb - xa)
        q = (s * (1 - s))[..., None]
        G = D / q
        Gp = (Dp * q - D * (1 - 2 * s)[..., None]) / (q * q)
        w = (la * lb)[..., None]
        x[sel] += w * G
        dTa = lb[..., None] * G - 0.5 * w * Gp
        dTb = la[..., None] * G + 0.5 * w * Gp
        J[sel] += np.einsum("eqd,j->eqdj", dTa, DLAM[a]) + np.einsum("eqd,j->eqdj", dTb, DLAM[b])
    return x, J


def det_inv(J):
    det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
    inv = np.empty_like(J)
    inv[..., 0, 0] = J[..., 1, 1] / det
    inv[..., 1, 1] = J[..., 0, 0] / det
    inv[..., 0, 1] = -J[..., 0, 1] / det
    inv[..., 1, 0] = -J[..., 1, 0] / det
    return det, inv
