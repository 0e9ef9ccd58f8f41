"""Reference operator on the torus and its functional calculus.

The torus is the square [-Rs, Rs)^2 with periodic identification.  The
operator P = -hbar^2 w^{-1} div(A grad .) acts in L^2(w dx); it is
discretized either by periodic finite elements (any contents) or, for the
flat torus, by a Fourier spectral grid whose eigenvalues are exactly
(hbar pi |j| / Rs)^2.

Functions of P are computed three ways: from eigenpairs (Borel), from the
Helffer-Sjostrand integral of the resolvent, and for the flat torus by the
Fourier multiplier f(hbar^2 |j|^2 pi^2 / Rs^2).  Large operators use a
Chebyshev filter in t = 1/(lambda + sigma), one factorization of K + sigma M.
"""
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from numpy.polynomial import chebyshev as npcheb
from numpy.polynomial import hermite as nphermite
from numpy.polynomial import legendre as npleg

from .errors import (
    ConfigurationError,
    ContractError,
    DomainError,
    QuadratureError,
    TruncationError,
)
from .fem import FeSpace, build_torus_mesh
from .fem.assembly import Coefficients, assemble_stiffness_mass
from .fem.evaluate import derivative_gram

CONTENTS = ("flat", "dirichlet_disk", "penetrable_disk")
MIN_PPW = 4.0
RESOLVED_PPW = {1: 8.0, 2: 6.0}  # degree -> points per wavelength; 4 above
DENSE_LIMIT = 4000


# ---------------------------------------------------------------- cutoffs


def _h(x):
    out = np.zeros_like(x, dtype=float)
    m = x > 0
    out[m] = np.exp(-1.0 / x[m])
    return out


def step(x):
    """Smooth transition: 0 for x <= 0, 1 for x >= 1."""
    x = np.asarray(x, dtype=float)
    a, b = _h(x), _h(1.0 - x)
    return a / (a + b)


def step_prime(x):
    x = np.asarray(x, dtype=float)
    a, b = _h(x), _h(1.0 - x)
    da = np.zeros_like(a)
    db = np.zeros_like(b)
    m = x > 0
    da[m] = a[m] / x[m] ** 2
    m = x < 1
    db[m] = b[m] / (1.0 - x[m]) ** 2
    return (da * b + a * db) / (a + b) ** 2


def master_cutoff(lam):
    """psi: 1 on |lam| <= 2, 0 on |lam| >= 4, smooth in between."""
    return 1.0 - step((np.abs(np.asarray(lam, dtype=float)) - 2.0) / 2.0)


def smooth_plateau(r, r_in, r_out):
    """1 for r <= r_in, 0 for r >= r_out, smooth and monotone between."""
    if not r_out > r_in:
        raise ConfigurationError("need r_out > r_in")
    return 1.0 - step((np.asarray(r, dtype=float) - r_in) / (r_out - r_in))


def default_mu(c_min=1.0):
    """Ellipticity margin rule with A = I and c in [c_min, 1] outside the hole."""
    return max(2.0, 2.0 / c_min ** 2)


@dataclass(frozen=True)
class CutoffPair:
    """psi_mu = psi(./mu) and psi_mu' = psi(./mu') with 1/2 <= mu' <= mu/2."""

    mu: float = 2.0
    mu_prime: float | None = None

    def __post_init__(self):
        if self.mu <= 1:
            raise ConfigurationError("mu must exceed 1")
        mp = self.mu / 2 if self.mu_prime is None else self.mu_prime
        object.__setattr__(self, "mu_prime", float(mp))
        if not 0.5 <= self.mu_prime <= self.mu / 2:
            raise ConfigurationError("need 1/2 <= mu' <= mu/2, got mu'=%g" % self.mu_prime)

    def low(self, lam):
        return master_cutoff(np.asarray(lam) / self.mu)

    def high(self, lam):
        return 1.0 - self.low(lam)

    def high_prime(self, lam):
        return 1.0 - master_cutoff(np.asarray(lam) / self.mu_prime)

    @property
    def low_support(self):
        """psi_mu vanishes for lambda >= 4 mu."""
        return 4.0 * self.mu

    def check(self, n=4001):
        lam = np.linspace(0, 5 * self.mu, n)
        inner = master_cutoff(lam / self.mu_prime) > 0
        if np.any(np.abs(self.low(lam[inner]) - 1) > 0):
            raise ConfigurationError("psi_mu is not 1 on supp psi_mu'")
        if master_cutoff(1.0 / self.mu_prime) != 1.0:
            raise ConfigurationError("psi_mu'(1) != 1")
        return True


# ---------------------------------------------------------------- operators


def spectral_d2(n, length):
    """Fourier second-derivative matrix on n equispaced periodic points."""
    if n % 2:
        raise ConfigurationError("grid size must be even")
    h = 2 * np.pi / n
    j = np.arange(1, n)
    col = np.empty(n)
    col[0] = -np.pi ** 2 / (3 * h * h) - 1.0 / 6
    col[1:] = -0.5 * (-1.0) ** j / np.sin(h * j / 2) ** 2
    return sla.toeplitz(col) * (2 * np.pi / length) ** 2


@dataclass
class ReferenceOperator:
    """Discretized P on the torus: K u = lambda M u on the free unknowns."""

    contents: str
    hbar: float
    Rsharp: float
    K: object
    M: object
    discretization: str
    spacing: float
    R0: float | None = None
    c: float = 1.0
    beta: float = 1.0
    space: object = None
    grid_n: int = 0
    _chol: object = field(default=None, repr=False)
    _shift_lu: dict = field(default_factory=dict, repr=False)

    @property
    def n(self):
        return self.K.shape[0]

    @property
    def k(self):
        return 1.0 / self.hbar

    @property
    def resolved_max(self):
        """Largest eigenvalue whose wavelength is resolved by the discretization.

        Lagrange elements need RESOLVED_PPW points per wavelength at p = 1 and
        fewer at higher degree; the Fourier grid is exact below Nyquist.
        """
        if self.discretization == "grid":
            ppw = 2.2
        else:
            ppw = RESOLVED_PPW.get(self.space.p, 4.0)
        xi = 2 * np.pi / (ppw * self.spacing)
        return (self.hbar * xi) ** 2

    @property
    def area(self):
        A = 4 * self.Rsharp ** 2
        if self.contents == "dirichlet_disk":
            A -= np.pi * self.R0 ** 2
        return A

    @property
    def weyl_area(self):
        """int w/A dx, the leading Weyl coefficient times 4 pi."""
        if self.contents == "penetrable_disk":
            return 4 * self.Rsharp ** 2 + np.pi * self.R0 ** 2 * (1.0 / self.c ** 2 - 1.0)
        return self.area

    def dense(self):
        K = self.K.toarray() if sp.issparse(self.K) else np.asarray(self.K)
        M = self.M.toarray() if sp.issparse(self.M) else np.asarray(self.M)
        return K, M

    def symmetry_defect(self):
        K, M = self.K, self.M
        dk = abs(K - K.T).max() if sp.issparse(K) else np.abs(K - K.T).max()
        dm = abs(M - M.T).max() if sp.issparse(M) else np.abs(M - M.T).max()
        nk = abs(K).max() if sp.issparse(K) else np.abs(K).max()
        nm = abs(M).max() if sp.issparse(M) else np.abs(M).max()
        return float(max(dk / nk, dm / nm))

    def norm(self, v):
        return float(np.sqrt(max(np.real(np.vdot(v, self.M @ v)), 0.0)))

    def inner(self, u, v):
        return np.vdot(v, self.M @ u)

    def apply(self, v):
        """P v = M^{-1} K v."""
        return self._mass_solve(self.K @ v)

    def _mass_solve(self, b):
        if not sp.issparse(self.M):
            return np.linalg.solve(self.M, b)
        if self._chol is None:
            self._chol = spla.splu(self.M.tocsc())
        return _lu_solve(self._chol, b)

    def resolvent(self, z, v):
        """(P - z)^{-1} v = (K - z M)^{-1} M v."""
        A = (self.K - z * self.M)
        if sp.issparse(A):
            return spla.spsolve(A.tocsc(), self.M @ v)
        return np.linalg.solve(A, self.M @ v)

    def shifted_solver(self, sigma):
        """Callable v -> (K + sigma M)^{-1} M v with a cached factorization."""
        if sigma not in self._shift_lu:
            A = self.K + sigma * self.M
            if sp.issparse(A):
                self._shift_lu[sigma] = spla.splu(A.tocsc())
            else:
                self._shift_lu[sigma] = sla.lu_factor(A)
        lu = self._shift_lu[sigma]
        if isinstance(lu, tuple):
            return lambda v: sla.lu_solve(lu, self.M @ v)
        return lambda v: _lu_solve(lu, self.M @ v)

    def node_points(self):
        """Physical positions of the unknowns."""
        if self.discretization == "grid":
            g = -self.Rsharp + 2 * self.Rsharp / self.grid_n * np.arange(self.grid_n)
            X, Y = np.meshgrid(g, g, indexing="ij")
            return np.column_stack([X.ravel(), Y.ravel()])
        return self.space.node_points()[self.space.free]

    def embed(self, v):
        """Free-dof vector -> full FE coefficient vector."""
        if self.discretization == "grid":
            return v
        out = np.zeros(self.space.ndof, dtype=np.result_type(v, float))
        out[self.space.free] = v
        return out


def _lu_solve(lu, b):
    if np.iscomplexobj(b) and not np.iscomplexobj(lu.L.data):
        return lu.solve(np.ascontiguousarray(b.real)) + 1j * lu.solve(np.ascontiguousarray(b.imag))
    return lu.solve(b)


def build_reference(contents, k, Rsharp, resolution=8.0, R0=None, c=1.0, beta=1.0,
                    discretization="fem", p=3):
    """Discretize P on the torus of half-period Rsharp at hbar = 1/k.

    ``resolution`` is the number of unknowns per wavelength 2 pi / k: grid
    spacing, or sqrt(area / ndof) for elements.  Below MIN_PPW the request
    is refused.
    """
    if contents not in CONTENTS:
        raise ConfigurationError("contents must be one of %s" % (CONTENTS,))
    if k <= 0 or Rsharp <= 0:
        raise DomainError("k and Rsharp must be positive")
    if resolution < MIN_PPW:
        raise ConfigurationError(
            "resolution %.2f points per wavelength is below the minimum %g" % (resolution, MIN_PPW)
        )
    hbar = 1.0 / k
    wavelength = 2 * np.pi / k
    if discretization == "grid":
        if contents != "flat":
            raise ConfigurationError("the spectral grid only discretizes the flat torus")
        n = int(math.ceil(2 * Rsharp / (wavelength / resolution)))
        n += n % 2
        h = 2 * Rsharp / n
        D2 = spectral_d2(n, 2 * Rsharp)
        I = np.eye(n)
        lap = np.kron(D2, I) + np.kron(I, D2)
        K = -(hbar ** 2) * h * h * lap
        K = 0.5 * (K + K.T)
        M = sp.identity(n * n, format="csr") * (h * h)
        return ReferenceOperator(contents, hbar, float(Rsharp), K, M, "grid", h, grid_n=n)
    if discretization != "fem":
        raise ConfigurationError("discretization must be 'fem' or 'grid'")
    target = wavelength / resolution
    # the torus mesher's diameter is about 1.45 grid steps; correct if short
    h_target = 1.45 * p * target
    if contents != "flat":
        if R0 is None:
            raise ConfigurationError("contents %r needs R0" % contents)
        h_target = min(h_target, 0.5 * R0)
    for _ in range(4):
        mesh = build_torus_mesh(Rsharp, h_target, R0=R0, contents=contents)
        if contents == "dirichlet_disk":
            space = FeSpace(mesh, p, dirichlet=("inner",))
        else:
            space = FeSpace(mesh, p)
        spacing = math.sqrt(float(mesh.signed_areas().sum()) / space.ndof)
        if spacing <= 1.02 * target:
            break
        h_target *= 0.98 * target / spacing
    if contents == "dirichlet_disk":
        coeffs = Coefficients.dirichlet()
    elif contents == "penetrable_disk":
        coeffs = Coefficients.transmission(c, beta)
    else:
        coeffs = Coefficients.dirichlet()
    Kf, Mf = assemble_stiffness_mass(space, coeffs)
    f = space.free
    K = (hbar ** 2) * Kf[f][:, f].tocsr()
    M = Mf[f][:, f].tocsr()
    K = 0.5 * (K + K.T)
    M = 0.5 * (M + M.T)
    return ReferenceOperator(contents, hbar, float(Rsharp), K, M, "fem", spacing,
                             R0=R0, c=c, beta=beta, space=space)


# ---------------------------------------------------------------- eigenpairs


@dataclass(frozen=True)
class SpectralBasis:
    """M-orthonormal eigenpairs in ascending order.

    ``cover`` is the largest eigenvalue up to which the spectrum is
    complete (inf for a full decomposition).
    """

    lam: np.ndarray
    vecs: np.ndarray
    operator: ReferenceOperator
    cover: float

    @property
    def count(self):
        return len(self.lam)

    @property
    def complete(self):
        return np.isinf(self.cover)

    def coefficients(self, v):
        return self.vecs.T @ (self.operator.M @ v)

    def synthesize(self, a):
        return self.vecs @ a

    def residual(self):
        """max_j ||P phi_j - lambda_j phi_j|| / (1 + lambda_j) in the weighted norm."""
        op = self.operator
        R = op.K @ self.vecs - (op.M @ self.vecs) * self.lam
        # weighted dual norm through the mass matrix
        Z = np.column_stack([op._mass_solve(R[:, j]) for j in range(R.shape[1])])
        nr = np.sqrt(np.abs(np.sum(Z * (op.M @ Z), axis=0)))
        return float(np.max(nr / (1 + np.abs(self.lam))))

    def gram_defect(self):
        G = self.vecs.T @ (self.operator.M @ self.vecs)
        return float(np.abs(G - np.eye(G.shape[0])).max())

    def export_csv(self, path):
        np.savetxt(path, np.column_stack([np.arange(self.count), self.lam]), delimiter=",",
                   header="j,lambda", comments="", fmt=["%d", "%.16e"])


def eigenbasis(op, n_eig=None, lam_max=None):
    """Eigenpairs of op: dense for small problems, shift-invert otherwise.

    Without ``n_eig``/``lam_max`` a dense solve returns the full spectrum.
    """
    if op.n <= DENSE_LIMIT:
        K, M = op.dense()
        lam, V = sla.eigh(K, M)
        keep = np.ones(lam.size, bool)
        cover = np.inf
        if lam_max is not None and lam[-1] > lam_max:
            keep &= lam <= lam_max
            cover = float(lam_max)
        if n_eig is not None and n_eig < keep.sum():
            keep &= np.arange(lam.size) < n_eig
            cover = float(0.5 * (lam[n_eig - 1] + lam[n_eig])) if cover == np.inf else min(
                cover, float(lam[n_eig - 1]))
        return SpectralBasis(lam[keep], V[:, keep], op, cover)
    if n_eig is None and lam_max is None:
        raise ConfigurationError("%d unknowns: give n_eig or lam_max" % op.n)
    want = n_eig or 200
    Kc, Mc = op.K.tocsc(), op.M.tocsc()
    while True:
        lam, V = spla.eigsh(Kc, k=min(want, op.n - 2), M=Mc, sigma=-1.0, which="LM")
        order = np.argsort(lam)
        lam, V = lam[order], V[:, order]
        if lam_max is None or lam[-1] > lam_max or want >= op.n - 2:
            break
        want = min(op.n - 2, 2 * want)
    if lam_max is not None:
        keep = lam <= lam_max
        lam, V = lam[keep], V[:, keep]
        cover = float(lam_max)
    else:
        # the last returned eigenvalue may have an unreturned twin
        cover = float(lam[-1]) * (1 - 1e-9)
        keep = lam < cover
        lam, V = lam[keep], V[:, keep]
    # re-orthonormalize in the M product
    G = V.T @ (op.M @ V)
    L = np.linalg.cholesky(G)
    V = np.linalg.solve(L, V.T).T
    return SpectralBasis(lam, V, op, cover)


# ---------------------------------------------------------------- Borel calculus


def borel_apply(basis, f, v):
    """f(P) v = sum_j f(lambda_j) <v, phi_j> phi_j.

    With an incomplete basis f must vanish beyond ``basis.cover``.
    """
    if not basis.complete and _tail_nonzero(f, basis.cover):
        raise TruncationError("f does not vanish beyond the resolved spectrum %.3g" % basis.cover)
    a = basis.coefficients(v)
    fl = np.asarray(f(basis.lam), dtype=complex) * np.ones(basis.count)
    return basis.synthesize(fl * a)


def _tail_nonzero(f, cover):
    x = cover * (1 + np.geomspace(1e-9, 1e3, 200))
    return np.any(np.abs(f(x)) > 0)


def resolvent_function(z):
    return lambda lam: 1.0 / (lam - z)


@dataclass(frozen=True)
class Projectors:
    low: object
    high: object
    high_prime: object
    cutoffs: CutoffPair


def projectors(basis, cutoffs=None):
    """Pi_L = psi_mu(P), Pi_H = Id - Pi_L and Pi_H' = (1 - psi_mu')(P)."""
    cutoffs = cutoffs or CutoffPair()
    cutoffs.check()
    if not basis.complete and basis.cover < cutoffs.low_support:
        raise TruncationError(
            "basis covers lambda <= %.3g but psi_mu needs %.3g" % (basis.cover, cutoffs.low_support)
        )

    def low(v):
        return borel_apply(basis, cutoffs.low, v)

    def high(v):
        return v - low(v)

    def high_prime(v):
        return v - borel_apply(basis, lambda x: master_cutoff(np.asarray(x) / cutoffs.mu_prime), v)

    return Projectors(low, high, high_prime, cutoffs)


# ---------------------------------------------------------------- Chebyshev filter


@dataclass
class ChebyshevFilter:
    """f(P) v ~ g(T) v with T = (K + sigma M)^{-1} M and g(t) = f(1/t - sigma).

    The spectrum of T lies in (0, 1/sigma] when P >= 0.  One factorization
    serves every application.
    """

    op: ReferenceOperator
    f: object
    degree: int | None = None
    sigma: float = 4.0
    tol: float = 1e-10
    max_degree: int = 3000

    def __post_init__(self):
        if self.sigma <= 0:
            raise ConfigurationError("sigma must be positive")
        self.tmax = 1.0 / self.sigma

        def g(x):
            # g(0) = f(inf) = 0 for the cutoffs filtered here
            t = 0.5 * self.tmax * (x + 1)
            out = np.zeros_like(t)
            pos = t > 0
            out[pos] = self.f(1.0 / t[pos] - self.sigma)
            return out

        coef = npcheb.chebinterpolate(g, self.degree or self.max_degree)
        if self.degree is None:
            big = np.nonzero(np.abs(coef) > self.tol * np.abs(coef).max())[0]
            coef = coef[: big[-1] + 1]
        self.coef = coef
        self.degree = len(coef) - 1
        self._solve = self.op.shifted_solver(self.sigma)

    def scalar(self, lam):
        t = 1.0 / (np.asarray(lam, float) + self.sigma)
        return npcheb.chebval(2 * t / self.tmax - 1, self.coef)

    def apply(self, v):
        """Clenshaw recurrence in the operator X = 2 T / tmax - I."""
        def X(y):
            return (2.0 / self.tmax) * self._solve(y) - y

        b1 = np.zeros_like(v, dtype=complex)
        b2 = np.zeros_like(b1)
        for c in self.coef[:0:-1]:
            b1, b2 = c * v + 2 * X(b1) - b2, b1
        return self.coef[0] * v + X(b1) - b2


# ---------------------------------------------------------------- Fourier multipliers


def torus_frequencies(n, Rsharp):
    """pi j / Rsharp for the FFT ordering of an n-point periodic grid."""
    return np.pi * np.fft.fftfreq(n, 1.0 / n) / Rsharp


def fourier_multiplier_apply(f, v, hbar, Rsharp, contents="flat"):
    """v -> sum_j vhat(j) f(hbar^2 |j|^2 pi^2 / Rs^2) e_j on an n x n grid."""
    if contents != "flat":
        raise ContractError("the Fourier multiplier path only represents -hbar^2 Laplacian")
    v = np.asarray(v)
    n = v.shape[0]
    xi = torus_frequencies(n, Rsharp)
    X, Y = np.meshgrid(xi, xi, indexing="ij")
    sym = f(hbar ** 2 * (X ** 2 + Y ** 2))
    return np.fft.ifft2(np.fft.fft2(v) * sym)


def fourier_derivative(v, beta, Rsharp):
    """d^beta v by FFT on the torus grid."""
    n = v.shape[0]
    xi = torus_frequencies(n, Rsharp)
    X, Y = np.meshgrid(xi, xi, indexing="ij")
    mult = (1j * X) ** beta[0] * (1j * Y) ** beta[1]
    if n % 2 == 0:
        # the Nyquist mode has no well-defined odd derivative
        ny = np.abs(np.fft.fftfreq(n, 1.0 / n)) == n // 2
        mult[ny, :] *= 0 if beta[0] % 2 else 1
        mult[:, ny] *= 0 if beta[1] % 2 else 1
    return np.fft.ifft2(np.fft.fft2(v) * mult)


def grid_norm(v, Rsharp):
    n = v.shape[0]
    return float(np.sqrt(np.sum(np.abs(v) ** 2)) * (2 * Rsharp / n))


def multiplier_derivative_ratio(phi, v, beta, hbar, Rsharp):
    """||d^beta phi(-hbar^2 Lap) v|| / ||v||."""
    w = fourier_multiplier_apply(phi, v, hbar, Rsharp)
    return grid_norm(fourier_derivative(w, beta, Rsharp), Rsharp) / grid_norm(v, Rsharp)


# ---------------------------------------------------------------- Helffer-Sjostrand


def tau(s):
    """1 for |s| <= 1, 0 for |s| >= 2."""
    return 1.0 - step(np.abs(s) - 1.0)


def tau_prime(s):
    return -step_prime(np.abs(s) - 1.0) * np.sign(s)


class AlmostAnalytic:
    """Order-n almost-analytic extension of f from its derivatives.

    ``derivative(x, m)`` returns f^{(m)}(x).  The extension is
    sum_{m<=n} f^{(m)}(x) (iy)^m / m! times tau(y / <x>), and

        dbar f~ = 1/2 [f^{(n+1)}(x) (iy)^n / n! tau + S(x, y) tau'(s) (ds/dx + i ds/dy)].
    """

    def __init__(self, derivative, order=2, support=(-8.0, 8.0), l1_top=None):
        if order < 1:
            raise ConfigurationError("order must be at least 1")
        self.derivative = derivative
        self.order = int(order)
        self.support = support
        xs = np.linspace(*support, 4001)
        self.l1_top = l1_top if l1_top is not None else float(
            np.trapezoid(np.abs(derivative(xs, self.order + 1)), xs))

    @classmethod
    def gaussian(cls, order=2, scale=1.0, center=0.0):
        """f(x) = exp(-scale (x - center)^2)."""
        a = math.sqrt(scale)
        half = 6.5 / a  # exp(-t^2) < 1e-18 beyond

        def deriv(x, m):
            t = a * (np.asarray(x, float) - center)
            c = np.zeros(m + 1)
            c[m] = 1.0
            return (-a) ** m * nphermite.hermval(t, c) * np.exp(-t * t)

        return cls(deriv, order, (center - half, center + half))

    def __call__(self, x):
        return self.derivative(x, 0)

    def series(self, x, y):
        out = np.zeros(np.broadcast(x, y).shape, complex)
        for m in range(self.order + 1):
            out += self.derivative(x, m) * (1j * y) ** m / math.factorial(m)
        return out

    def extension(self, x, y):
        return self.series(x, y) * tau(y / np.sqrt(1 + x * x))

    def dbar(self, x, y):
        jx = np.sqrt(1 + x * x)
        s = y / jx
        n = self.order
        top = self.derivative(x, n + 1) * (1j * y) ** n / math.factorial(n) * tau(s)
        ds = -y * x / jx ** 3 + 1j / jx
        tp = tau_prime(s)
        side = np.where(tp != 0, self.series(x, y) * tp * ds, 0.0)
        return 0.5 * (top + side)


def _tridiagonalize(A, M=None):
    """Symmetric A (in the M product) -> (d, e, Q, Lt) with Lt^{-1} Q T Q^T Lt = A-operator."""
    A = np.asarray(A, dtype=float)
    if M is not None:
        L = np.linalg.cholesky(np.asarray(M, float))
        Ai = np.linalg.solve(L, np.linalg.solve(L, A.T).T)
        Lt = L.T
    else:
        Ai = A
        Lt = None
    Ai = 0.5 * (Ai + Ai.T)
    if Ai.shape[0] <= 2:
        T, Q = Ai, np.eye(Ai.shape[0])
    else:
        T, Q = sla.hessenberg(Ai, calc_q=True)
    d = np.diag(T).copy()
    e = np.diag(T, 1).copy() if T.shape[0] > 1 else np.zeros(0)
    return d, e, Q, Lt


def _thomas_many(d, e, b, z):
    """Solve (T - z_i) x_i = b for many shifts; returns (len(z), n)."""
    n = d.size
    Z = z.size
    cp = np.empty((Z, max(n - 1, 0)), complex)
    bp = np.empty((Z, n), complex)
    den = d[0] - z
    if n > 1:
        cp[:, 0] = e[0] / den
    bp[:, 0] = b[0] / den
    for i in range(1, n):
        den = d[i] - z - e[i - 1] * cp[:, i - 1]
        if i < n - 1:
            cp[:, i] = e[i] / den
        bp[:, i] = (b[i] - e[i - 1] * bp[:, i - 1]) / den
    x = bp
    for i in range(n - 2, -1, -1):
        x[:, i] = bp[:, i] - cp[:, i] * x[:, i + 1]
    return x


@dataclass
class HSResult:
    value: np.ndarray
    error_estimate: float
    n_panels: int
    n_nodes: int
    y_cut: float
    neglected: float


def _split(P):
    """Four children per panel: quadtree, or strips along a long side."""
    xa, xb, ya, yb = P.T
    wide = (xb - xa) > 2 * (yb - ya)
    tall = (yb - ya) > 2 * (xb - xa)
    t = np.linspace(0, 1, 5)[:-1]
    kids = np.empty((len(P), 4, 4))
    # quadtree default
    xm, ym = 0.5 * (xa + xb), 0.5 * (ya + yb)
    kids[:, 0] = np.column_stack([xa, xm, ya, ym])
    kids[:, 1] = np.column_stack([xm, xb, ya, ym])
    kids[:, 2] = np.column_stack([xa, xm, ym, yb])
    kids[:, 3] = np.column_stack([xm, xb, ym, yb])
    for i in range(4):
        lo, hi = t[i], t[i] + 0.25
        kids[wide, i] = np.column_stack([xa + lo * (xb - xa), xa + hi * (xb - xa), ya, yb])[wide]
        kids[tall, i] = np.column_stack([xa, xb, ya + lo * (yb - ya), ya + hi * (yb - ya)])[tall]
    return kids


def helffer_sjostrand_apply(A, f, v, M=None, tol=1e-7, q=6, max_panels=200000,
                            max_depth=60):
    """f(P) v = (1/pi) int dbar f~(z) (P - z)^{-1} v dx dy by adaptive panels.

    P is the symmetric matrix A (or M^{-1} A with a mass matrix M).  The
    strip is cut at y_cut where the neglected part is below tol / 10; the
    rest of the upper half plane is split into dyadic layers in y and
    refined by comparing each panel's Gauss rule with its four children.
    """
    if not isinstance(f, AlmostAnalytic):
        raise ConfigurationError("f must be an AlmostAnalytic function")
    v = np.asarray(v)
    if np.iscomplexobj(v):
        re = helffer_sjostrand_apply(A, f, v.real, M, tol, q, max_panels, max_depth)
        im = helffer_sjostrand_apply(A, f, v.imag, M, tol, q, max_panels, max_depth)
        return HSResult(re.value + 1j * im.value, re.error_estimate + im.error_estimate,
                        re.n_panels + im.n_panels, re.n_nodes + im.n_nodes, re.y_cut,
                        re.neglected + im.neglected)
    d, e, Q, Lt = _tridiagonalize(A, M)
    b = Q.T @ (Lt @ v if Lt is not None else v)
    vnorm = max(float(np.linalg.norm(b)), 1e-300)
    n = f.order
    y_cut = (tol / 10 * 2 * np.pi * n * math.factorial(n) / max(f.l1_top, 1e-300)) ** (1.0 / n)
    neglected = f.l1_top * y_cut ** n / (2 * np.pi * n * math.factorial(n))
    x0, x1 = f.support
    ytop = 2 * math.sqrt(1 + max(x0 * x0, x1 * x1))
    t, w = npleg.leggauss(q)
    W2 = np.outer(w, w)

    def panel_sums(P):
        """Integral over each panel [xa, xb] x [ya, yb]."""
        xa, xb, ya, yb = P.T
        X = 0.5 * (xa + xb)[:, None, None] + 0.5 * (xb - xa)[:, None, None] * t[None, :, None]
        Y = 0.5 * (ya + yb)[:, None, None] + 0.5 * (yb - ya)[:, None, None] * t[None, None, :]
        X, Y = np.broadcast_arrays(X, Y)
        g = f.dbar(X, Y) * (0.25 * (xb - xa) * (yb - ya))[:, None, None] * W2
        g = g.reshape(len(P), -1)
        zz = (X + 1j * Y).reshape(len(P), -1)
        out = np.zeros((len(P), b.size), complex)
        live = np.abs(g).max(1) > 0
        idx = np.nonzero(live)[0]
        per = max(1, 20000 // g.shape[1])
        for s in range(0, idx.size, per):
            sel = idx[s:s + per]
            sol = _thomas_many(d, e, b, zz[sel].ravel())
            out[sel] = np.einsum("pq,pqn->pn", g[sel], sol.reshape(len(sel), -1, b.size))
        return out

    layers = []
    yb = ytop
    while yb > y_cut:
        ya = max(yb / 2, y_cut)
        layers.append((ya, yb))
        yb = ya
    panels = []
    for ya, yb in layers:
        width = min(max(yb, 0.05), 1.0)
        nx = max(1, int(math.ceil((x1 - x0) / width)))
        xs = np.linspace(x0, x1, nx + 1)
        panels += [(xs[i], xs[i + 1], ya, yb) for i in range(nx)]
    P = np.array(panels)
    coarse = panel_sums(P)
    total = np.zeros(b.size, complex)
    err_total = 0.0
    n_nodes = len(P) * q * q
    n_done = 0
    depth = 0
    area_total = (x1 - x0) * ytop
    while len(P):
        depth += 1
        if depth > max_depth or n_done + 4 * len(P) > max_panels:
            raise QuadratureError(
                "Helffer-Sjostrand quadrature did not converge: %d panels pending, "
                "%d accepted, depth %d, tol %.1e" % (len(P), n_done, depth, tol)
            )
        kids = _split(P)
        ks = panel_sums(kids.reshape(-1, 4)).reshape(len(P), 4, b.size)
        n_nodes += kids.shape[0] * 4 * q * q
        fine = ks.sum(1)
        err = np.linalg.norm(fine - coarse, axis=1) / vnorm
        area = (P[:, 1] - P[:, 0]) * (P[:, 3] - P[:, 2])
        ok = err <= tol * area / area_total
        total += fine[ok].sum(0)
        err_total += float(err[ok].sum())
        n_done += int(ok.sum())
        P = kids[~ok].reshape(-1, 4)
        coarse = ks[~ok].reshape(-1, b.size)
    # real symmetric P and real v: the lower half plane gives the conjugate
    val = (2.0 / np.pi) * total.real
    out = Q @ val
    if Lt is not None:
        out = np.linalg.solve(Lt, out)
    return HSResult(out, err_total * 2 / np.pi + neglected, n_done, n_nodes, y_cut, neglected)


# ---------------------------------------------------------------- heat flow and Weyl


def heat_apply(basis, t, v):
    """exp(-t P / hbar^2) v."""
    if t <= 0:
        raise DomainError("t must be positive")
    h2 = basis.operator.hbar ** 2
    # the tail beyond an incomplete basis is dropped (spectral truncation)
    return basis.synthesize(np.exp(-t * basis.lam / h2) * basis.coefficients(v))


def multi_indices(order):
    return [(i, order - i) for i in range(order, -1, -1)]


@dataclass
class HeatConstants:
    orders: list
    constants: dict  # alpha -> sup_t t^{|alpha|/2} ||rho d^alpha e^{-tP/hbar^2}||
    per_order: np.ndarray
    argmax_t: dict
    nu: float
    log_convex: bool


def heat_derivative_constant(basis, alphas, t_grid, rho=None):
    """sup over t of t^{|a|/2} ||rho d^a exp(-t P/hbar^2)|| for each multi-index a.

    The norm is the exact operator norm on the span of the basis (the
    largest singular value), which dominates any sampling over random v.
    """
    t_grid = np.asarray(t_grid, float)
    if np.any(t_grid <= 0):
        raise DomainError("t must be positive")
    op = basis.operator
    h2 = op.hbar ** 2
    out, arg = {}, {}
    for a in alphas:
        G = _derivative_gram(op, basis, a, rho)
        best, bt = 0.0, None
        for t in t_grid:
            e = np.exp(-t * basis.lam / h2)
            top = np.linalg.eigvalsh(e[:, None] * G * e[None, :])[-1]
            val = t ** (sum(a) / 2) * math.sqrt(max(top, 0.0))
            if val > best:
                best, bt = val, t
        out[tuple(a)] = best
        arg[tuple(a)] = bt
    return out, arg


def _derivative_gram(op, basis, alpha, rho):
    if op.discretization == "grid":
        n = op.grid_n
        V = basis.vecs.reshape(n, n, -1)
        D = np.stack([fourier_derivative(V[:, :, j], alpha, op.Rsharp)
                      for j in range(V.shape[2])], -1).reshape(n * n, -1)
        w = op.spacing ** 2 * np.ones(n * n)
        if rho is not None:
            w = w * rho(op.node_points()) ** 2
        G = D.conj().T @ (w[:, None] * D)
        return np.real(G)
    full = np.zeros((op.space.ndof, basis.count))
    full[op.space.free] = basis.vecs
    weight = None if rho is None else (lambda x: rho(x) ** 2)
    return derivative_gram(op.space, full, alpha, weight)


def heat_constants(basis, max_order, t_grid, rho=None):
    """Constants for all |alpha| <= max_order and a factorial-growth fit.

    The fit is log C_m = log A - (m/2) log nu + log m! over the per-order
    maxima; log-convexity of m -> log C_m is checked directly.
    """
    orders = list(range(1, max_order + 1))
    alphas = [a for m in orders for a in multi_indices(m)]
    const, arg = heat_derivative_constant(basis, alphas, t_grid, rho)
    per = np.array([max(const[a] for a in multi_indices(m)) for m in orders])
    m = np.array(orders, float)
    y = np.log(per) - np.array([math.lgamma(k + 1) for k in m])
    slope, _ = np.polyfit(m, y, 1)
    nu = math.exp(-2 * slope)
    lc = np.log(per)
    convex = bool(np.all(np.diff(lc, 2) >= -1e-9)) if len(lc) > 2 else True
    return HeatConstants(orders, const, per, arg, nu, convex)


def weyl_count(basis, lam_grid):
    """N(lambda) = #{lambda_j <= lambda} with multiplicity."""
    lam_grid = np.asarray(lam_grid, float)
    top = min(basis.cover, basis.operator.resolved_max)
    if lam_grid.size and lam_grid.max() > top:
        raise TruncationError("lambda %.3g exceeds the resolved spectrum %.3g"
                              % (lam_grid.max(), top))
    return np.searchsorted(basis.lam, lam_grid * (1 + 1e-10) + 1e-12, side="right")


def lattice_count(lam, hbar, Rsharp):
    """#{j in Z^2 : (hbar pi |j| / Rs)^2 <= lam}."""
    rmax = math.sqrt(max(lam, 0.0)) * Rsharp / (hbar * np.pi)
    m = int(math.floor(rmax)) + 1
    j = np.arange(-m, m + 1)
    J1, J2 = np.meshgrid(j, j)
    return int(np.sum(J1 ** 2 + J2 ** 2 <= rmax ** 2 + 1e-9))


def weyl_quotients(basis, lam_grid):
    """N(lambda) hbar^2 / lambda divided by the leading coefficient area / (4 pi)."""
    op = basis.operator
    N = weyl_count(basis, lam_grid)
    lead = op.weyl_area / (4 * np.pi)
    return N * op.hbar ** 2 / np.asarray(lam_grid) / lead


# ---------------------------------------------------------------- pseudo-locality


def pseudolocality_norm(basis, f, chi1, chi2):
    """||chi1 f(P) chi2|| for multiplication cutoffs (grid discretization)."""
    op = basis.operator
    if op.discretization != "grid":
        raise ContractError("pseudo-locality norms are computed on the spectral grid")
    x = op.node_points()
    c1, c2 = chi1(x), chi2(x)
    F = (basis.vecs * f(basis.lam)) @ basis.vecs.T
    B = (c1[:, None] * F) * c2[None, :]
    # the grid mass matrix is spacing^2 I
    return float(op.spacing ** 2 * np.linalg.norm(B, 2))
