"""Frequency splitting of a Helmholtz solution into u_A + u_H2.

With w = phi u glued into the torus and P the reference operator,

    u_H = Pi_H w,   u_L = Pi_L w,
    u_A^R0  = rho1 Pi_L (rho2 w),
    u_A^inf = (1 - rho4) Op(varphi(|xi|^2)) (1 - rho3) Pi_L ((1 - rho2) w),
    u_A = u_A^R0 + u_A^inf,   u_eps = u_L - u_A,   u_H2 = u_H + u_eps.

The cutoffs are radial and nested, rho4 < rho3 < rho2 < rho1, where a < b
means supp a lies inside {b = 1}.  All fields are nodal vectors of the
finite element space on the torus; the far-field multiplier is applied on a
periodic Fourier grid and transferred back by band-limited interpolation.
"""
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ConfigurationError, ContractError, TruncationError
from .exact_oracle import bump, gauss_panels, solve_volume, worst_modal_data
from .fem.evaluate import PointLocator, derivative_gram
from .spectral import (
    ChebyshevFilter,
    CutoffPair,
    borel_apply,
    build_reference,
    fourier_multiplier_apply,
    master_cutoff,
    smooth_plateau,
    torus_frequencies,
)

FIELDS = ("w", "u_L", "u_H", "u_A_R0", "u_A_inf", "u_A", "u_eps", "u_H2")


@dataclass(frozen=True)
class CutoffLayout:
    """Radii of the nested cutoffs; each pair is (inner, outer) of a plateau."""

    R0: float
    R: float
    Rsharp: float
    rho4: tuple
    rho3: tuple
    rho2: tuple
    rho1: tuple
    phi: tuple

    def __post_init__(self):
        chain = [(self.R0, self.R0), self.rho4, self.rho3, self.rho2, self.rho1]
        for (a0, b0), (a1, b1) in zip(chain, chain[1:]):
            if not (a1 < b1 and b0 <= a1):
                raise ConfigurationError("cutoffs must be nested: %s then %s" % ((a0, b0), (a1, b1)))
        if not (self.phi[0] >= self.R and self.phi[1] < self.Rsharp and self.phi[0] < self.phi[1]):
            raise ConfigurationError("phi must equal 1 on B_R and vanish inside the torus cell")
        if self.rho4[0] <= self.R0:
            raise ConfigurationError("rho4 must equal 1 near the obstacle")

    @classmethod
    def default(cls, R0=0.12, Rsharp=0.6):
        """Equal plateaus between R0 and 0.7 Rsharp, scaled with Rsharp."""
        s = Rsharp / 0.6
        return cls(R0, 0.44 * s, Rsharp, (0.16 * s, 0.21 * s), (0.23 * s, 0.28 * s),
                   (0.30 * s, 0.35 * s), (0.37 * s, 0.42 * s), (0.44 * s, 0.56 * s))

    def profile(self, name, r):
        a, b = getattr(self, name)
        return smooth_plateau(r, a, b)

    def at(self, name, x):
        return self.profile(name, np.hypot(x[..., 0], x[..., 1]))

    def derivative_growth(self, name="rho1", orders=4, n=20001):
        """A with sup |d^m rho/dr^m| <= A^m for m <= orders (radial profile)."""
        a, b = getattr(self, name)
        r = np.linspace(a - 0.1 * (b - a), b + 0.1 * (b - a), n)
        h = r[1] - r[0]
        y = self.profile(name, r)
        A = 1.0
        for m in range(1, orders + 1):
            y = np.gradient(y, h)
            A = max(A, float(np.abs(y).max()) ** (1.0 / m))
        return A


def two_scale_data(k, support, amplitude=10.0, direction=(1.0, 0.0)):
    """f = bump(r) (exp(ik x.d) + A exp(3ik x.d)).

    The first term excites the resonant (low-frequency) response, the
    second one a non-resonant response at three times the wavenumber.
    """
    a, b = support
    d = np.asarray(direction, float)
    d = d / np.linalg.norm(d)

    def f(x):
        r = np.hypot(x[..., 0], x[..., 1])
        ph = x[..., 0] * d[0] + x[..., 1] * d[1]
        return bump(r, a, b) * (np.exp(1j * k * ph) + amplitude * np.exp(3j * k * ph))

    return f


def _bump_l2(a, b):
    nodes, wts, _ = gauss_panels(a, b, 8)
    r = nodes.ravel()
    return math.sqrt(2 * np.pi * float(np.sum(wts.ravel() * r * bump(r, a, b) ** 2)))


def resonant_two_scale_data(k, geometry, R, amplitude=1.0, high_support=None,
                            direction=(1.0, 0.0)):
    """Unit-norm worst-mode data plus ``amplitude`` times a unit-norm 3k plane-wave bump.

    The first part attains the sharp per-mode solution-operator norm, so the
    low-frequency response has the largest size the resolvent allows; the
    second one drives a non-resonant response at three times the wavenumber.
    Returns (f, support) with support = (R0, R).
    """
    R0 = float(geometry["R0"])
    a, b = high_support or (R0 + 0.1 * (R - R0), R - 0.1 * (R - R0))
    fw, n, _ = worst_modal_data(k, geometry, R)
    d = np.asarray(direction, float)
    d = d / np.linalg.norm(d)
    scale = amplitude / _bump_l2(a, b)

    def f(x):
        r = np.hypot(x[..., 0], x[..., 1])
        ph = x[..., 0] * d[0] + x[..., 1] * d[1]
        return fw(x) + scale * bump(r, a, b) * np.exp(3j * k * ph)

    f.mode = n
    return f, (R0, R)


# ---------------------------------------------------------------- grid transfer


def grid_size(k, Rsharp, band):
    """Even FFT size whose Nyquist frequency exceeds band * k."""
    n = int(math.ceil(2 * Rsharp * band * k / np.pi)) + 2
    return n + n % 2


def fe_to_grid(space, coeffs, n, L, live):
    """Values of an FE field on the n x n periodic grid of [-L, L)^2.

    Only points where ``live(x)`` holds are evaluated; the rest are zero.
    """
    g = -L + 2 * L / n * np.arange(n)
    X, Y = np.meshgrid(g, g, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    out = np.zeros(n * n, complex)
    sel = live(pts)
    if sel.any():
        out[sel] = PointLocator(space.mesh).evaluate(space, coeffs, pts[sel])
    return out.reshape(n, n)


def grid_to_points(G, L, pts, upsample=8):
    """Band-limited interpolation: zero-padded FFT then a quintic spline."""
    n = G.shape[0]
    N = n * upsample
    H = np.fft.fft2(G)
    H[n // 2, :] = 0.0  # drop the ambiguous Nyquist modes
    H[:, n // 2] = 0.0
    P = np.zeros((N, N), complex)
    idx = np.r_[0:n // 2, N - n // 2:N]
    src = np.r_[0:n // 2, n - n // 2:n]
    P[np.ix_(idx, idx)] = H[np.ix_(src, src)]
    F = np.fft.ifft2(P) * upsample ** 2
    c = ((np.asarray(pts) + L) / (2 * L) * N).T
    re = ndimage.map_coordinates(F.real, c, order=5, mode="grid-wrap")
    im = ndimage.map_coordinates(F.imag, c, order=5, mode="grid-wrap")
    return re + 1j * im


# ---------------------------------------------------------------- splitting


def low_pass(op, cutoffs, method="auto", tol=1e-10):
    """Callable applying Pi_L = psi_mu(P) to nodal vectors (or columns)."""
    if method == "auto":
        method = "eigen" if op.n <= 2500 else "chebyshev"
    if method == "eigen":
        from .spectral import eigenbasis

        basis = eigenbasis(op)
        free = op.space.free

        def apply(V):
            return _on_free(op, V, lambda x: borel_apply(basis, cutoffs.low, x))

        return apply
    if method == "chebyshev":
        filt = ChebyshevFilter(op, cutoffs.low, tol=tol)

        def apply(V):
            return _on_free(op, V, filt.apply)

        apply.filter = filt
        return apply
    raise ConfigurationError("method must be 'auto', 'eigen' or 'chebyshev'")


def _on_free(op, V, fn):
    free = op.space.free
    out = np.zeros(V.shape, complex)
    out[free] = fn(V[free])
    return out


def split_field(op, w, layout, cutoffs, low=None, band=4.5, upsample=8):
    """The splitting of a nodal field w; returns a dict of nodal fields."""
    sp_ = op.space
    x = sp_.node_points()
    rho = {n: layout.at(n, x) for n in ("rho1", "rho2", "rho3", "rho4")}
    w = np.asarray(w, complex).copy()
    w[sp_.fixed] = 0.0
    low = low or low_pass(op, cutoffs)
    pair = low(np.column_stack([rho["rho2"] * w, (1 - rho["rho2"]) * w]))
    near, far = pair[:, 0], pair[:, 1]
    u_L = near + far
    u_H = w - u_L
    u_A_R0 = rho["rho1"] * near
    X = (1 - rho["rho3"]) * far
    # far part: multiplier on the Fourier grid, zero near the obstacle
    n = grid_size(op.k, op.Rsharp, band)
    r3 = layout.rho3[0]
    G = fe_to_grid(sp_, X, n, op.Rsharp, lambda p: np.hypot(p[:, 0], p[:, 1]) > r3)
    mu = cutoffs.mu
    Yg = fourier_multiplier_apply(lambda s: master_cutoff(s / (2 * mu)), G, op.hbar, op.Rsharp)
    r = np.hypot(x[:, 0], x[:, 1])
    u_A_inf = np.zeros(sp_.ndof, complex)
    live = (1 - rho["rho4"]) > 0
    u_A_inf[live] = (1 - rho["rho4"][live]) * grid_to_points(Yg, op.Rsharp, x[live], upsample)
    u_A_inf[sp_.fixed] = 0.0
    u_A = u_A_R0 + u_A_inf
    u_eps = u_L - u_A
    return {"w": w, "u_L": u_L, "u_H": u_H, "u_A_R0": u_A_R0, "u_A_inf": u_A_inf,
            "u_A": u_A, "u_eps": u_eps, "u_H2": u_H + u_eps,
            "grid": {"n": n, "far": G, "multiplied": Yg}}


# ---------------------------------------------------------------- results


@dataclass
class DecompositionResult:
    k: float
    layout: CutoffLayout
    cutoffs: CutoffPair
    op: object
    fields: dict
    f_norm: float
    g_norm: float
    geometry: dict
    info: dict = field(default_factory=dict)

    def __getattr__(self, name):
        fields = self.__dict__.get("fields", {})
        if name in fields:
            return fields[name]
        raise AttributeError(name)

    def derivative_norm(self, name, alpha, region="B_R"):
        """||d^alpha field||_{L^2}, over B_R (default) or the whole torus."""
        sp_ = self.op.space
        if sum(alpha) > sp_.p:
            raise ContractError("derivative order %d needs degree >= %d" % (sum(alpha), sum(alpha)))
        R = self.layout.R
        weight = None
        if region == "B_R":
            weight = lambda x: (np.hypot(x[..., 0], x[..., 1]) <= R).astype(float)
        G = derivative_gram(sp_, self.fields[name], tuple(alpha), weight)
        return float(np.sqrt(max(np.real(G[0, 0]), 0.0)))

    def gradient_norm(self, name, region="B_R"):
        return math.hypot(self.derivative_norm(name, (1, 0), region),
                          self.derivative_norm(name, (0, 1), region))

    def order_norm(self, name, m, region="B_R"):
        """(sum over |alpha| = m of ||d^alpha field||^2)^(1/2)."""
        return math.sqrt(sum(self.derivative_norm(name, (i, m - i), region) ** 2
                             for i in range(m + 1)))

    def weighted_norms(self, name):
        """||v|| and ||P v|| in the weighted torus product."""
        op = self.op
        v = self.fields[name][op.space.free]
        return op.norm(v), op.norm(op.apply(v))

    def stability_constant(self, name="u_H2"):
        """(||v|| + ||P v||) / ||g|| with g = hbar^2 f, the data of (P - 1) u = g."""
        a, b = self.weighted_norms(name)
        return (a + b) / self.g_norm

    def trace_defect(self):
        """Largest nodal value on the Dirichlet boundary over all fields."""
        fx = self.op.space.fixed
        if not fx.any():
            return 0.0
        return max(float(np.abs(self.fields[n][fx]).max()) for n in FIELDS)

    def completeness_defect(self):
        f = self.fields
        w = np.abs(f["w"]).max()
        return float(np.abs(f["u_L"] + f["u_H"] - f["w"]).max() / w)

    def summary(self):
        out = {"k": self.k, "f_norm": self.f_norm, "g_norm": self.g_norm}
        for n in ("u_H2", "u_A", "u_H", "u_eps"):
            out["L2_" + n] = self.derivative_norm(n, (0, 0))
            out["H1semi_" + n] = self.gradient_norm(n)
        out["stability_u_H2"] = self.stability_constant("u_H2")
        out["stability_u_eps"] = self.stability_constant("u_eps")
        out.update(self.info)
        return out

    def export(self, directory):
        """Per-field nodal CSV files plus a JSON summary."""
        import json
        import os

        os.makedirs(directory, exist_ok=True)
        x = self.op.space.node_points()
        for n in FIELDS:
            v = self.fields[n]
            np.savetxt(os.path.join(directory, "%s.csv" % n),
                       np.column_stack([x, v.real, v.imag]), delimiter=",",
                       header="x,y,re_u,im_u", comments="")
        with open(os.path.join(directory, "summary.json"), "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)


def decompose(k, geometry, f, support, layout=None, cutoffs=None, p=4, resolution=12.0,
              method="auto", tol=1e-10, data_wavenumber=None):
    """Split the outgoing solution of Delta u + k^2 u = -f on the obstacle's exterior.

    The solution comes from the exact oracle and is normalized to
    ||f||_{L^2} = 1.  ``geometry`` is {"kind": "dirichlet", "R0": ..} or
    {"kind": "transmission", "R0": .., "c": .., "beta": ..}.
    """
    kind = geometry["kind"]
    R0 = float(geometry["R0"])
    layout = layout or CutoffLayout.default(R0)
    if abs(layout.R0 - R0) > 1e-14:
        raise ConfigurationError("layout and geometry disagree on R0")
    c = float(geometry.get("c", 1.0))
    cutoffs = cutoffs or CutoffPair(max(2.0, 2.0 / min(c, 1.0) ** 2))
    contents = {"dirichlet": "dirichlet_disk", "transmission": "penetrable_disk"}[kind]
    op = build_reference(contents, k, layout.Rsharp, resolution=resolution, R0=R0,
                         c=c, beta=float(geometry.get("beta", 1.0)), p=p)
    if op.resolved_max < cutoffs.low_support:
        need = resolution * math.sqrt(cutoffs.low_support / op.resolved_max)
        raise TruncationError(
            "the discretization resolves lambda <= %.3g but psi_mu reaches %.3g; "
            "use resolution >= %.1f" % (op.resolved_max, cutoffs.low_support, need)
        )
    sol = solve_volume(k, geometry, f, support, data_wavenumber=data_wavenumber)
    x = op.space.node_points()
    phi = layout.at("phi", x)
    w = np.zeros(op.space.ndof, complex)
    live = phi > 0
    w[live] = phi[live] * sol.evaluate(x[live]) / sol.f_norm
    fields = split_field(op, w, layout, cutoffs, low_pass(op, cutoffs, method, tol))
    grid = fields.pop("grid")
    info = {"n_dofs": int(op.space.ndof), "grid_n": grid["n"], "resolved_max": op.resolved_max,
            "mu": cutoffs.mu, "A_rho1": layout.derivative_growth("rho1")}
    return DecompositionResult(float(k), layout, cutoffs, op, fields, 1.0, 1.0 / k ** 2,
                               dict(geometry), info)


# ---------------------------------------------------------------- fits


@dataclass(frozen=True)
class ExponentFit:
    quantity: str
    k: tuple
    slope: float
    intercept: float
    residual: float
    target: float | None = None
    flagged: bool = False

    def as_dict(self):
        return {"quantity": self.quantity, "k": list(self.k), "slope": self.slope,
                "intercept": self.intercept, "residual": self.residual,
                "target": self.target, "flagged": self.flagged}


def fit_exponent(name, ks, values, target=None):
    ks = np.asarray(ks, float)
    values = np.asarray(values, float)
    if ks.size < 4:
        raise ContractError("an exponent fit needs at least 4 k-points, got %d" % ks.size)
    X, Y = np.log(ks), np.log(values)
    slope, icpt = np.polyfit(X, Y, 1)
    res = float(np.sqrt(np.mean((Y - (slope * X + icpt)) ** 2)))
    return ExponentFit(name, tuple(ks.tolist()), float(slope), float(icpt), res, target, res > 0.5)


def measure_exponents(results, orders=(0, 1, 2), M_hat=0.0):
    """Log-log slopes of ||d^alpha u_H2|| and ||d^alpha u_A|| on B_R against k.

    Targets are |alpha| - 2 for u_H2 and |alpha| - 1 + M_hat for u_A; norms
    are summed over multi-indices of the same order.
    """
    results = sorted(results, key=lambda r: r.k)
    ks = [r.k for r in results]
    fits = []
    for m in orders:
        fits.append(fit_exponent("u_H2 order %d" % m, ks,
                                 [r.order_norm("u_H2", m) for r in results], m - 2.0))
        fits.append(fit_exponent("u_A order %d" % m, ks,
                                 [r.order_norm("u_A", m) for r in results], m - 1.0 + M_hat))
    return fits


@dataclass(frozen=True)
class FactorialFit:
    orders: tuple
    norms: tuple
    C2: float
    C3: float
    residual: float


def factorial_growth_check(result, max_order=6, M_hat=0.0, name="u_A"):
    """Fit log||d^m u|| - (m - 1 + M) log k = log C2 + m log C3 + log m!."""
    p = result.op.space.p
    if max_order > p:
        raise ContractError("orders up to %d need elements of degree >= %d (have %d)"
                            % (max_order, max_order, p))
    if max_order < 2:
        raise ContractError("need derivative orders up to at least 2")
    m = np.arange(max_order + 1)
    norms = np.array([result.order_norm(name, int(j)) for j in m])
    y = np.log(norms) - (m - 1 + M_hat) * math.log(result.k) - np.array(
        [math.lgamma(j + 1) for j in m])
    b, a = np.polyfit(m, y, 1)
    res = float(np.sqrt(np.mean((y - (a + b * m)) ** 2)))
    return FactorialFit(tuple(m.tolist()), tuple(norms.tolist()), math.exp(a), math.exp(b), res)
