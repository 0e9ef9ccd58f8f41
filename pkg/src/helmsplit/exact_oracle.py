"""Separable exact solutions for the sound-soft and the penetrable disk.

Fields are expanded in e^{in theta}.  Outside the obstacle the scattered
part is sum_n a_n H1_n(kr) e^{in theta}; inside a penetrable disk the field
is sum_n b_n J_n(kr/c) e^{in theta}.  The incident plane wave e^{ik x.d}
with d = (cos alpha, sin alpha) has coefficients i^n e^{-in alpha} J_n(kr).

Volume data are handled mode by mode with the radial Green's function
built from the solution regular at the obstacle and the outgoing one.
"""
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import legendre as npleg

from . import specfun
from .errors import (
    CapacityError,
    ConditioningWarning,
    ConfigurationError,
    DataError,
    DomainError,
)

EXTRA_MODES = 30
COND_WARN = 1e12
QUAD_ORDER = 16


def _direction(direction):
    d = np.asarray(direction, dtype=float)
    if d.ndim == 0:
        return np.array([math.cos(d), math.sin(d)])
    if d.shape != (2,) or not math.isclose(np.hypot(*d), 1.0, rel_tol=1e-12):
        raise DomainError("incidence direction must be a unit vector or an angle")
    return d


def _polar(x):
    x = np.asarray(x, dtype=float)
    return np.hypot(x[..., 0], x[..., 1]), np.arctan2(x[..., 1], x[..., 0])


def _signed(table, orders):
    return specfun.signed_orders(table, orders)


def _cyl(x, orders):
    """Signed-order J, Y, J', Y' at arguments x for the given orders."""
    nmax = int(np.abs(orders).max())
    J, Y, dJ, dY = specfun.cyl_table(x, nmax, n_max=max(specfun.N_MAX, nmax + 1))
    return (_signed(J, orders), _signed(Y, orders), _signed(dJ, orders),
            _signed(dY, orders))


def _complex(re, im):
    # J + 1j*Y would turn an overflowed Y into nan through 0*inf
    z = np.empty(np.broadcast(re, im).shape, complex)
    z.real, z.imag = re, im
    return z


def _hankel(x, orders):
    J, Y, dJ, dY = _cyl(x, orders)
    return J, _complex(J, Y), dJ, _complex(dJ, dY)


@dataclass(frozen=True)
class ModalExpansion:
    """Plane-wave scattering solution as a truncated modal series."""

    k: float
    geometry: dict
    orders: np.ndarray
    a: np.ndarray
    b: np.ndarray | None
    direction: np.ndarray
    condition: float = 1.0

    @property
    def n_modes(self):
        return int(self.orders.max())

    @property
    def kind(self):
        return self.geometry["kind"]

    @property
    def R0(self):
        return self.geometry.get("R0", 0.0)

    @property
    def incident_coeffs(self):
        alpha = math.atan2(self.direction[1], self.direction[0])
        return (1j) ** (self.orders % 4) * np.exp(-1j * self.orders * alpha)

    def incident(self, x, gradient=False):
        x = np.asarray(x, dtype=float)
        u = np.exp(1j * self.k * (x @ self.direction))
        if not gradient:
            return u
        return u, 1j * self.k * u[..., None] * self.direction

    def _series(self, r, th, coeffs, wavenumber, radial, gradient):
        """sum_n coeffs_n Z_n(wavenumber r) e^{in theta}, Z = J or H1."""
        out = np.zeros(r.shape, complex)
        grad = np.zeros(r.shape + (2,), complex)
        live = np.abs(coeffs) > 0
        if r.size == 0 or not live.any():
            return (out, grad) if gradient else out
        n = self.orders[live]
        c = coeffs[live]
        for sl in _chunks(r.size, 20000):
            rr = r.ravel()[sl]
            tt = th.ravel()[sl]
            if radial == "J":
                Z, _, dZ, _ = _cyl(wavenumber * rr, n)
            else:
                _, Z, _, dZ = _hankel(wavenumber * rr, n)
            e = np.exp(1j * np.multiply.outer(tt, n))
            with np.errstate(invalid="ignore", over="ignore"):
                terms = c * Z * e
                terms = np.where(np.isfinite(terms), terms, 0.0)
            out.ravel()[sl] = terms.sum(-1)
            if gradient:
                with np.errstate(invalid="ignore", over="ignore"):
                    ur = (c * wavenumber * dZ * e)
                    ut = terms * (1j * n)
                    ur = np.where(np.isfinite(ur), ur, 0.0).sum(-1)
                    ut = ut.sum(-1) / rr
                cs, sn = np.cos(tt), np.sin(tt)
                g = grad.reshape(-1, 2)
                g[sl, 0] = ur * cs - ut * sn
                g[sl, 1] = ur * sn + ut * cs
        return (out, grad) if gradient else out

    def scattered(self, x, gradient=False):
        """Scattered field (exterior series) at points outside the obstacle."""
        r, th = _polar(x)
        if self.kind == "free":
            z = np.zeros(r.shape, complex)
            return (z, np.zeros(r.shape + (2,), complex)) if gradient else z
        return self._series(r, th, self.a, self.k, "H", gradient)

    def evaluate(self, x, gradient=False):
        """Total field; zero inside a sound-soft obstacle."""
        x = np.asarray(x, dtype=float)
        r, th = _polar(x)
        u = np.zeros(r.shape, complex)
        g = np.zeros(r.shape + (2,), complex)
        out = r >= self.R0 if self.kind != "free" else np.ones(r.shape, bool)
        if out.any():
            ui, gi = self.incident(x[out], True)
            us, gs = self.scattered(x[out], True)
            u[out] = ui + us
            g[out] = gi + gs
        if self.kind == "transmission" and (~out).any():
            kin = self.k / self.geometry["c"]
            ub, gb = self._series(r[~out], th[~out], self.b, kin, "J", True)
            u[~out] = ub
            g[~out] = gb
        return (u, g) if gradient else u

    def radial(self, r):
        """Per-mode total field u_n(r), u_n'(r) and local wavenumber, shape (len(r), 2N+1)."""
        r = np.atleast_1d(np.asarray(r, dtype=float))
        I = self.incident_coeffs
        if self.kind == "transmission" and np.any(r < self.R0):
            if np.any(r >= self.R0):
                raise ConfigurationError("radial(): pass interior and exterior radii separately")
            kin = self.k / self.geometry["c"]
            J, _, dJ, _ = _cyl(kin * r, self.orders)
            return self.b * J, self.b * kin * dJ, kin
        J, H, dJ, dH = _hankel(self.k * r, self.orders)
        with np.errstate(invalid="ignore", over="ignore"):
            u = I * J + np.where(self.a != 0, self.a * H, 0.0)
            du = self.k * (I * dJ + np.where(self.a != 0, self.a * dH, 0.0))
        return u, du, self.k

    def far_field(self, theta):
        """u_s ~ e^{ikr} r^{-1/2} F(theta) as r -> infinity."""
        theta = np.asarray(theta, dtype=float)
        pref = math.sqrt(2.0 / (math.pi * self.k)) * np.exp(-0.25j * math.pi)
        phase = (-1j) ** (self.orders % 4)
        return pref * (np.exp(1j * np.multiply.outer(theta, self.orders)) @ (self.a * phase))

    def interface_residual(self, n_points=32, rng=None):
        """Largest mismatch of the boundary or interface conditions at random points."""
        rng = np.random.default_rng(rng)
        th = rng.uniform(0, 2 * np.pi, n_points)
        R0 = self.R0
        x = R0 * np.column_stack([np.cos(th), np.sin(th)])
        nrm = x / R0
        uo, go = self.evaluate(x, True)
        if self.kind == "dirichlet":
            return float(np.max(np.abs(uo)))
        kin = self.k / self.geometry["c"]
        ui, gi = self._series(np.full(n_points, R0), th, self.b, kin, "J", True)
        beta = self.geometry["beta"]
        # interior equation c^2 Delta u + k^2 u = 0 with flux d_r u_- = beta d_r u_+
        ro = np.abs(ui - uo)
        rf = np.abs(np.sum(gi * nrm, -1) - beta * np.sum(go * nrm, -1))
        scale = max(1.0, float(np.max(np.abs(uo))))
        fscale = max(1.0, float(np.max(np.abs(np.sum(go * nrm, -1)))))
        return float(max(ro.max() / scale, rf.max() / fscale))

    def flux(self, r):
        """Net radial energy flux Im int_{|x|=r} conj(u) d_r u and its scale."""
        u, du, _ = self.radial(np.array([float(r)]))
        terms = 2 * np.pi * r * np.conj(u[0]) * du[0]
        return float(np.imag(terms.sum())), float(np.sum(np.abs(terms)))

    def export_csv(self, path, points):
        export_csv(path, points, self.evaluate(points))


def _chunks(n, size):
    for s in range(0, n, size):
        yield slice(s, min(n, s + size))


def default_modes(k, R0):
    return int(math.ceil(k * R0)) + EXTRA_MODES


def _check_modes(N):
    if N > specfun.N_MAX:
        raise CapacityError("mode cutoff %d exceeds N_max = %d" % (N, specfun.N_MAX))


def mie_dirichlet(k, R0, direction=(1.0, 0.0), n_modes=None):
    """Sound-soft disk of radius R0: a_n = -i^n e^{-in alpha} J_n(kR0)/H1_n(kR0)."""
    if k <= 0 or R0 <= 0:
        raise DomainError("k and R0 must be positive")
    d = _direction(direction)
    N = default_modes(k, R0) if n_modes is None else int(n_modes)
    _check_modes(N)
    orders = np.arange(-N, N + 1)
    J, H, _, _ = _hankel(np.array([k * R0]), orders)
    J, H = J[0], H[0]
    alpha = math.atan2(d[1], d[0])
    I = (1j) ** (orders % 4) * np.exp(-1j * orders * alpha)
    with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
        a = -I * J / H
    a = np.where(np.isfinite(a), a, 0.0)
    return ModalExpansion(float(k), {"kind": "dirichlet", "R0": float(R0)}, orders, a,
                          None, d)


def mie_transmission(k, R0, c, beta, direction=(1.0, 0.0), n_modes=None):
    """Penetrable disk: c^2 Delta u + k^2 u = 0 inside, flux jump beta on r = R0.

    Each mode solves a 2x2 system for (a_n, b_n).  Nearly singular systems
    raise a ConditioningWarning and the computed value is kept.
    """
    if min(k, R0, c, beta) <= 0:
        raise DomainError("k, R0, c and beta must be positive")
    d = _direction(direction)
    kin = k / c
    N = (int(math.ceil(max(k, kin) * R0)) + EXTRA_MODES) if n_modes is None else int(n_modes)
    _check_modes(N)
    orders = np.arange(-N, N + 1)
    J, H, dJ, dH = (v[0] for v in _hankel(np.array([k * R0]), orders))
    Ji, _, dJi, _ = (v[0] for v in _hankel(np.array([kin * R0]), orders))
    alpha = math.atan2(d[1], d[0])
    I = (1j) ** (orders % 4) * np.exp(-1j * orders * alpha)
    # rows: continuity of u and of the beta-weighted radial derivative
    M = np.empty((orders.size, 2, 2), complex)
    M[:, 0, 0] = -H
    M[:, 0, 1] = Ji
    M[:, 1, 0] = -beta * k * dH
    M[:, 1, 1] = kin * dJi
    rhs = np.stack([I * J, beta * k * I * dJ], -1)
    scale = np.max(np.abs(M), axis=1, keepdims=True)
    finite = np.all(np.isfinite(M), axis=(1, 2))
    a = np.zeros(orders.size, complex)
    b = np.zeros(orders.size, complex)
    Ms = M[finite] / scale[finite]
    sol = np.linalg.solve(Ms, rhs[finite][..., None])[..., 0] / scale[finite][:, 0, :]
    a[finite], b[finite] = sol[:, 0], sol[:, 1]
    cond = float(np.max(np.linalg.cond(Ms))) if finite.any() else np.inf
    if cond > COND_WARN:
        warnings.warn("transmission mode system has condition number %.2e" % cond,
                      ConditioningWarning, stacklevel=2)
    geo = {"kind": "transmission", "R0": float(R0), "c": float(c), "beta": float(beta)}
    return ModalExpansion(float(k), geo, orders, a, b, d, cond)


def free_plane_wave(k, direction=(1.0, 0.0), n_modes=None, radius=1.0):
    """The incident wave alone, written as a modal series (no obstacle)."""
    d = _direction(direction)
    N = default_modes(k, radius) if n_modes is None else int(n_modes)
    _check_modes(N)
    orders = np.arange(-N, N + 1)
    return ModalExpansion(float(k), {"kind": "free", "R0": 0.0}, orders,
                          np.zeros(orders.size, complex), None, d)


# ---------------------------------------------------------------- radial quadrature


def gauss_panels(a, b, n_panels, q=QUAD_ORDER):
    """Nodes and weights of composite Gauss-Legendre on [a, b]; shapes (P, q)."""
    t, w = npleg.leggauss(q)
    edges = np.linspace(a, b, n_panels + 1)
    h = np.diff(edges)[:, None]
    nodes = edges[:-1, None] + 0.5 * h * (t + 1)
    return nodes, 0.5 * h * w, edges


def _cumulative_matrix(q):
    """S[i, j] = integral over [-1, t_i] of the j-th Lagrange basis polynomial."""
    t, _ = npleg.leggauss(q)
    V = npleg.legvander(t, q - 1)
    C = np.linalg.inv(V)  # Legendre coefficients of the Lagrange basis (columns)
    Ci = npleg.legint(C, lbnd=-1)
    return npleg.legvander(t, q) @ Ci


_SMAT = {}


def cumulative_weights(n_panels, q=QUAD_ORDER, h=1.0):
    """Dense L, U with (L g)_i = integral from the left end to node i and
    (U g)_i = integral from node i to the right end.

    U is built directly rather than as (weights - L): the kernels it meets
    can grow like (r/s)^n, which would amplify the cancellation error.
    """
    if q not in _SMAT:
        _SMAT[q] = _cumulative_matrix(q)
    S = _SMAT[q]
    _, w = npleg.leggauss(q)
    n = n_panels * q
    L = np.zeros((n, n))
    U = np.zeros((n, n))
    for p in range(n_panels):
        rows = slice(p * q, (p + 1) * q)
        L[rows, : p * q] = np.tile(0.5 * h * w, p)
        L[rows, p * q : (p + 1) * q] = 0.5 * h * S
        U[rows, p * q : (p + 1) * q] = 0.5 * h * (w[None, :] - S)
        U[rows, (p + 1) * q :] = np.tile(0.5 * h * w, n_panels - p - 1)
    return L, U


class RadialGreen:
    """Homogeneous radial solutions for mode orders 0..N outside the obstacle.

    y1 satisfies the obstacle condition (zero at R0, or continues a regular
    interior solution J_n(kr/c) through the interface), y2 = H1_n(kr) is
    outgoing, and r W(y1, y2) = C_n is constant.
    """

    def __init__(self, k, geometry, n_max):
        self.k = float(k)
        self.geometry = dict(geometry)
        self.kind = geometry["kind"]
        self.R0 = float(geometry.get("R0", 0.0))
        _check_modes(n_max)
        self.n = np.arange(n_max + 1)
        k = self.k
        if self.kind == "dirichlet":
            J, H, _, _ = (v[0] for v in _hankel(np.array([k * self.R0]), self.n))
            self.p = np.ones(self.n.size, complex)
            with np.errstate(invalid="ignore", divide="ignore"):
                self.q = np.where(np.isfinite(H), -J / H, 0.0)
        elif self.kind == "transmission":
            c, beta = geometry["c"], geometry["beta"]
            kin = k / c
            J, H, dJ, dH = (v[0] for v in _hankel(np.array([k * self.R0]), self.n))
            Ji, _, dJi, _ = (v[0] for v in _hankel(np.array([kin * self.R0]), self.n))
            # p J + q H = J_n(kin R0) and beta k (p J' + q H') = kin J_n'(kin R0)
            det = beta * k * (J * dH - dJ * H)
            self.p = (Ji * beta * k * dH - kin * dJi * H) / det
            self.q = (kin * dJi * J - Ji * beta * k * dJ) / det
            self.kin = kin
        elif self.kind == "free":
            self.p = np.ones(self.n.size, complex)
            self.q = np.zeros(self.n.size, complex)
        else:
            raise ConfigurationError("unknown geometry kind %r" % (self.kind,))
        if not (np.all(np.isfinite(self.p)) and np.all(np.isfinite(self.q))):
            raise CapacityError("radial solutions overflow; reduce the mode cutoff")
        self.C = self.p * 2j / np.pi

    def solutions(self, r):
        """y1, y1', y2, y2' at radii r, shapes (len(r), N+1)."""
        r = np.asarray(r, dtype=float)
        k = self.k
        y1 = np.empty(r.shape + (self.n.size,), complex)
        dy1 = np.empty_like(y1)
        y2 = np.zeros_like(y1)
        dy2 = np.zeros_like(y1)
        inside = r < self.R0
        if (~inside).any():
            J, H, dJ, dH = _hankel(k * r[~inside], self.n)
            with np.errstate(invalid="ignore", over="ignore"):
                y1[~inside] = self.p * J + np.where(self.q != 0, self.q * H, 0.0)
                dy1[~inside] = k * (self.p * dJ + np.where(self.q != 0, self.q * dH, 0.0))
            y2[~inside] = H
            dy2[~inside] = k * dH
        if inside.any():
            if self.kind != "transmission":
                raise DomainError("radius inside the obstacle")
            J, _, dJ, _ = _cyl(self.kin * r[inside], self.n)
            y1[inside] = J
            dy1[inside] = self.kin * dJ
        if not (np.all(np.isfinite(y1)) and np.all(np.isfinite(y2))):
            raise CapacityError("radial solutions overflow; reduce the mode cutoff")
        return y1, dy1, y2, dy2


def _panel_count(length, wavenumber):
    return max(4, int(math.ceil(length * wavenumber / 2.0)) + 2)


@dataclass
class VolumeSolution:
    """Outgoing solution for volume data f supported in the annulus a <= r <= b.

    Holds per-mode cumulative integrals I1 = int_a^r y1 f s ds and
    I2 = int_r^b y2 f s ds on Gauss panels, so that

        u_n(r) = -(y2(r) I1(r) + y1(r) I2(r)) / C_n.
    """

    k: float
    geometry: dict
    support: tuple
    orders: np.ndarray
    green: RadialGreen
    edges: np.ndarray
    nodes: np.ndarray
    I1: np.ndarray  # (P*q, 2N+1)
    I2: np.ndarray
    f_norm: float
    f_modes: np.ndarray = field(repr=False)

    @property
    def n_modes(self):
        return int(self.orders.max())

    def _green_at(self, r):
        y1, dy1, y2, dy2 = self.green.solutions(r)
        a = np.abs(self.orders)
        return y1[:, a], dy1[:, a], y2[:, a], dy2[:, a], self.green.C[a]

    def _integrals_at(self, r):
        a, b = self.support
        I1 = np.zeros((r.size, self.orders.size), complex)
        I2 = np.zeros_like(I1)
        I1[r > b] = self._I1_total
        I2[r < a] = self._I2_total
        mid = np.nonzero((r >= a) & (r <= b))[0]
        if mid.size:
            q = QUAD_ORDER
            P = len(self.edges) - 1
            pan = np.clip(np.searchsorted(self.edges, r[mid], side="right") - 1, 0, P - 1)
            lo, hi = self.edges[pan], self.edges[pan + 1]
            t = 2 * (r[mid] - lo) / (hi - lo) - 1
            V = npleg.legvander(t, q - 1)
            for p in np.unique(pan):
                sel = pan == p
                rows = slice(p * q, (p + 1) * q)
                I1[mid[sel]] = V[sel] @ self._coef1[rows]
                I2[mid[sel]] = V[sel] @ self._coef2[rows]
        return I1, I2

    def radial(self, r):
        """u_n(r) and u_n'(r), shapes (len(r), 2N+1)."""
        r = np.atleast_1d(np.asarray(r, dtype=float))
        y1, dy1, y2, dy2, C = self._green_at(r)
        I1, I2 = self._integrals_at(r)
        u = -(y2 * I1 + y1 * I2) / C
        du = -(dy2 * I1 + dy1 * I2) / C
        return u, du

    def evaluate(self, x, gradient=False):
        x = np.asarray(x, dtype=float)
        r, th = _polar(x)
        u = np.zeros(r.shape, complex)
        g = np.zeros(r.shape + (2,), complex)
        if self.geometry["kind"] == "dirichlet":
            live = r >= self.geometry["R0"]
        else:
            live = np.ones(r.shape, bool)
        idx = np.nonzero(live.ravel())[0]
        rf, tf = r.ravel(), th.ravel()
        uf, gf = u.reshape(-1), g.reshape(-1, 2)
        for sl in _chunks(idx.size, 20000):
            ii = idx[sl]
            un, dun = self.radial(rf[ii])
            e = np.exp(1j * np.multiply.outer(tf[ii], self.orders))
            uf[ii] = np.sum(un * e, -1)
            if gradient:
                ur = np.sum(dun * e, -1)
                ut = np.sum(1j * self.orders * un * e, -1) / rf[ii]
                cs, sn = np.cos(tf[ii]), np.sin(tf[ii])
                gf[ii, 0] = ur * cs - ut * sn
                gf[ii, 1] = ur * sn + ut * cs
        return (u, g) if gradient else u

    def export_csv(self, path, points):
        export_csv(path, points, self.evaluate(points))


def _legendre_coeffs(values, n_panels, q):
    t, _ = npleg.leggauss(q)
    Vinv = np.linalg.inv(npleg.legvander(t, q - 1))
    vals = values.reshape(n_panels, q, -1)
    return np.einsum("ij,pjm->pim", Vinv, vals).reshape(n_panels * q, -1)


def solve_volume(k, geometry, f, support, n_modes=None, data_wavenumber=None):
    """Exact outgoing solution of Delta u + k^2 u = -f outside the obstacle.

    ``f(x)`` is a callable on points (..., 2) vanishing outside the annulus
    ``support = (a, b)`` with R0 <= a < b.  The angular cutoff is chosen from
    the Fourier decay of the samples unless ``n_modes`` is given.
    """
    a, b = map(float, support)
    R0 = float(geometry.get("R0", 0.0))
    if not (R0 <= a < b):
        raise DomainError("support must satisfy R0 <= a < b")
    kd = max(k, data_wavenumber or k)
    P = _panel_count(b - a, kd)
    nodes, wts, edges = gauss_panels(a, b, P)
    r = nodes.ravel()
    w = wts.ravel()
    M = 1 << int(math.ceil(math.log2(2 * (kd * b + 64) + 1)))
    th = 2 * np.pi * np.arange(M) / M
    pts = np.stack(np.broadcast_arrays(np.multiply.outer(r, np.cos(th)),
                                       np.multiply.outer(r, np.sin(th))), -1)
    vals = np.asarray(f(pts), dtype=complex)
    fh = np.fft.fft(vals, axis=1) / M
    if n_modes is None:
        amp = np.abs(fh).max(axis=0)
        freq = np.fft.fftfreq(M, 1.0 / M).astype(int)
        big = np.abs(freq[amp > 1e-13 * amp.max()]) if amp.max() > 0 else np.array([0])
        N = min(int(big.max()) + 4, M // 2 - 1)
        N = max(N, int(math.ceil(k * b)) + EXTRA_MODES)
    else:
        N = int(n_modes)
    if N >= M // 2:
        raise CapacityError("data are not resolved by %d angular samples" % M)
    _check_modes(N)
    orders = np.arange(-N, N + 1)
    fn = fh[:, orders % M]
    f_norm = math.sqrt(2 * np.pi * float(np.sum(w[:, None] * r[:, None] * np.abs(fn) ** 2)))
    green = RadialGreen(k, geometry, N)
    y1, _, y2, _ = green.solutions(r)
    ab = np.abs(orders)
    g1 = y1[:, ab] * fn * r[:, None]
    g2 = y2[:, ab] * fn * r[:, None]
    L, U = cumulative_weights(P, QUAD_ORDER, (b - a) / P)
    I1 = L @ g1
    tot2 = w @ g2
    I2 = U @ g2
    sol = VolumeSolution(float(k), dict(geometry), (a, b), orders, green, edges, r,
                         I1, I2, f_norm, fn)
    sol._coef1 = _legendre_coeffs(I1, P, QUAD_ORDER)
    sol._coef2 = _legendre_coeffs(I2, P, QUAD_ORDER)
    sol._I1_total = w @ g1
    sol._I2_total = tot2
    return sol


# ---------------------------------------------------------------- norms


def _radial_nodes(a, b, wavenumber):
    nodes, wts, _ = gauss_panels(a, b, _panel_count(b - a, wavenumber))
    return nodes.ravel(), wts.ravel()


def _modal_energy(r, w, u, du, orders, k):
    n2 = (orders.astype(float) ** 2)[None, :] / r[:, None] ** 2
    dens = np.abs(du) ** 2 + (n2 + k * k) * np.abs(u) ** 2
    return 2 * np.pi * float(np.sum(w[:, None] * r[:, None] * dens))


def h1k_norm_modal(expansion, k, R):
    """||u||_{H^1_k} over B_R minus a sound-soft obstacle (or all of B_R)."""
    tot = 0.0
    for r, w in _regions(expansion, R, k):
        u, du = _radial_pair(expansion, r)
        tot += _modal_energy(r, w, u, du, expansion.orders, k)
    return math.sqrt(tot)


def _regions(expansion, R, k):
    geo = expansion.geometry
    kind = geo["kind"]
    R0 = geo.get("R0", 0.0)
    if R <= R0:
        raise DomainError("R must exceed the obstacle radius")
    out = [_radial_nodes(R0, R, k)] if kind != "free" else [_radial_nodes(0.0, R, k)]
    if kind == "transmission":
        out.append(_radial_nodes(0.0, R0, k / geo["c"]))
    return out


def _radial_pair(expansion, r):
    if isinstance(expansion, ModalExpansion):
        u, du, _ = expansion.radial(r)
        return u, du
    return expansion.radial(r)


def oscillation_quotient(expansion, R):
    """|u|_{H^2(B_R)} / (k ||u||_{H^1_k(B_R)}) for a modal plane-wave solution.

    The Hessian is taken in the polar frame, where per mode
    H_rr = u'', H_tt = u'/r - n^2 u/r^2, H_rt = in (u'/r - u/r^2), and
    u'' comes from the radial Helmholtz equation.
    """
    k = expansion.k
    n = expansion.orders.astype(float)
    h2 = e1 = 0.0
    for r, w in _regions(expansion, R, k):
        u, du, kloc = expansion.radial(r)
        rr = r[:, None]
        d2u = -du / rr - (kloc * kloc - n ** 2 / rr ** 2) * u
        hrr = d2u
        htt = du / rr - n ** 2 * u / rr ** 2
        hrt = 1j * n * (du / rr - u / rr ** 2)
        dens = np.abs(hrr) ** 2 + 2 * np.abs(hrt) ** 2 + np.abs(htt) ** 2
        h2 += 2 * np.pi * float(np.sum(w[:, None] * rr * dens))
        e1 += _modal_energy(r, w, u, du, expansion.orders, k)
    return math.sqrt(h2) / (k * math.sqrt(e1))


# ---------------------------------------------------------------- C_sol


@dataclass
class CsolEstimate:
    k: np.ndarray
    quotient: np.ndarray
    M_hat: float
    log_C: float
    residual: float
    polynomial_consistent: bool
    family: str
    worst_mode: np.ndarray | None = None

    def as_dict(self):
        return {
            "k": self.k.tolist(),
            "quotient": self.quotient.tolist(),
            "M_hat": self.M_hat,
            "log_C": self.log_C,
            "residual": self.residual,
            "polynomial_consistent": self.polynomial_consistent,
            "family": self.family,
        }


def fit_power(x, y):
    """Least-squares fit log y = log C + M log x; returns (M, log C, rms residual)."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    M, c = np.polyfit(lx, ly, 1)
    res = ly - (M * lx + c)
    return float(M), float(c), float(np.sqrt(np.mean(res ** 2)))


def _modal_operator(k, geometry, R, n, n_panels=None):
    """Discretized f -> (sqrt-weighted) H^1_k components of u for mode n.

    Returns (B, s, w, P): columns act on sqrt(w s) f at the Gauss nodes s.
    """
    kind = geometry["kind"]
    R0 = float(geometry.get("R0", 0.0))
    P = n_panels or max(4, int(math.ceil((R - R0) * max(k, abs(n) / R) / 4.0)) + 2)
    nodes, wts, _ = gauss_panels(R0, R, P)
    s, w = nodes.ravel(), wts.ravel()
    green = RadialGreen(k, geometry, abs(n))
    y1, dy1, y2, dy2 = (v[:, -1] for v in green.solutions(s))
    C = green.C[-1]
    L, U = cumulative_weights(P, QUAD_ORDER, (R - R0) / P)
    Gu = -(y2[:, None] * L * (y1 * s)[None, :] + y1[:, None] * U * (y2 * s)[None, :]) / C
    Gd = -(dy2[:, None] * L * (y1 * s)[None, :] + dy1[:, None] * U * (y2 * s)[None, :]) / C
    dt = np.sqrt(w * s)
    wt = np.sqrt(n * n / s ** 2 + k * k)
    blocks = [dt[:, None] * Gd, (dt * wt)[:, None] * Gu]
    if kind == "transmission":
        kin = green.kin
        ri, wi = _radial_nodes(0.0, R0, max(kin, abs(n) / R0))
        yi, dyi, _, _ = (v[:, -1] for v in green.solutions(ri))
        row = -(y2 * s * w) / C  # u(r) = -y1(r) int y2 f s / C for r < R0
        di = np.sqrt(wi * ri)
        wti = np.sqrt(n * n / ri ** 2 + k * k)
        blocks.append(np.outer(di * dyi, row))
        blocks.append(np.outer(di * wti * yi, row))
    B = np.vstack(blocks) / np.sqrt(w * s)[None, :]
    return B, s, w, P


def modal_solution_norm(k, geometry, R, n, n_panels=None):
    """Sharp norm of f -> u for data e^{in theta} f(r) supported in R0 < r < R.

    The ratio ||u||_{H^1_k(B_R)} / ||f||_{L^2} is maximized over radial
    profiles by an SVD of the discretized Green's operator.
    """
    B = _modal_operator(k, geometry, R, n, n_panels)[0]
    top = np.linalg.eigvalsh(B.conj().T @ B)[-1]
    return float(np.sqrt(max(top, 0.0)))


def worst_modal_data(k, geometry, R, n=None):
    """Data e^{in theta} f(r) on R0 < r < R attaining the per-mode sharp norm.

    With ``n=None`` the mode is the worst one over orders 0..kR+10.  Returns
    (f, n, norm) with f a callable on points (..., 2) and ||f||_{L^2} = 1.
    """
    R0 = float(geometry.get("R0", 0.0))
    if n is None:
        N = int(math.ceil(k * R)) + 10
        _check_modes(N)
        vals = [modal_solution_norm(k, geometry, R, m) for m in range(N + 1)]
        n = int(np.argmax(vals))
    B, s, w, P = _modal_operator(k, geometry, R, n)
    lam, V = np.linalg.eigh(B.conj().T @ B)
    prof = V[:, -1] / np.sqrt(w * s)
    prof = prof / np.sqrt(2 * np.pi * np.sum(w * s * np.abs(prof) ** 2))
    coef = _legendre_coeffs(prof[:, None], P, QUAD_ORDER)[:, 0]
    edges = np.linspace(R0, R, P + 1)

    def f(x):
        x = np.asarray(x, float)
        r, th = _polar(x)
        out = np.zeros(r.shape, complex)
        m = (r > R0) & (r < R)
        rr = r[m]
        pan = np.clip(np.searchsorted(edges, rr, side="right") - 1, 0, P - 1)
        t = 2 * (rr - edges[pan]) / (edges[pan + 1] - edges[pan]) - 1
        Vt = npleg.legvander(t, QUAD_ORDER - 1)
        vals = np.einsum("ij,ij->i", Vt, coef.reshape(P, QUAD_ORDER)[pan])
        out[m] = vals * np.exp(1j * n * th[m])
        return out

    return f, n, float(np.sqrt(max(lam[-1], 0.0)))


def bump(r, a, b):
    """Smooth bump equal to exp(-1/(1 - t^2)) in the scaled variable, zero outside (a, b)."""
    t = (2 * r - (a + b)) / (b - a)
    out = np.zeros_like(r, dtype=float)
    m = np.abs(t) < 1
    out[m] = np.exp(1.0 - 1.0 / (1.0 - t[m] ** 2))
    return out


def estimate_csol(geometry, k_grid, R, family="worst", direction=(1.0, 0.0)):
    """Quotients ||u||_{H^1_k(B_R)} / ||f|| along k_grid and a power fit.

    family "worst" takes, at each k, the sharp per-mode norm over data
    supported in R0 < r < R (largest over orders 0..kR+10), so it is a
    lower bound for C_sol(k) that is attained up to discretization.
    family "bump" uses f = bump(r) e^{ik x.d}, or pass a callable
    ``family(k) -> f``.
    """
    k_grid = np.asarray(sorted(k_grid), dtype=float)
    if k_grid.size < 2 or np.any(k_grid <= 0):
        raise DomainError("need at least two positive wavenumbers")
    R0 = float(geometry.get("R0", 0.0))
    q = np.empty(k_grid.size)
    worst = np.zeros(k_grid.size, int) if family == "worst" else None
    d = _direction(direction)
    for i, k in enumerate(k_grid):
        if family == "worst":
            N = int(math.ceil(k * R)) + 10
            _check_modes(N)
            vals = [modal_solution_norm(k, geometry, R, n) for n in range(N + 1)]
            q[i] = max(vals)
            worst[i] = int(np.argmax(vals))
            continue
        if family == "bump":
            f = _bump_data(k, d, R0, R)
        elif callable(family):
            f = family(k)
        else:
            raise ConfigurationError("unknown data family %r" % (family,))
        sol = solve_volume(k, geometry, f, (R0, R))
        if sol.f_norm == 0:
            raise DataError("data vanish identically")
        q[i] = h1k_norm_modal(sol, k, R) / sol.f_norm
    M, c, res = fit_power(k_grid, q)
    fam = family if isinstance(family, str) else getattr(family, "__name__", "custom")
    return CsolEstimate(k_grid, q, M, c, res, res <= 0.5, fam, worst)


def _bump_data(k, d, a, b):
    def f(x):
        r = np.hypot(x[..., 0], x[..., 1])
        return bump(r, a, b) * np.exp(1j * k * (x @ d))

    return f


def export_csv(path, points, values):
    """Write x, y, Re u, Im u columns."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    v = np.asarray(values).reshape(-1)
    np.savetxt(path, np.column_stack([pts, v.real, v.imag]), delimiter=",",
               header="x,y,re_u,im_u", comments="")
