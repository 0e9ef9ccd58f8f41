"""Exterior Dirichlet-to-Neumann map on the circle of radius R.

The outgoing mode H1_n(kr) e^{in theta} has Dirichlet trace e^{in theta} on
r = R after normalization and Neumann trace d_n e^{in theta} with

    d_n = k H1'_n(kR) / H1_n(kR).

As kR grows d_n tends to ik, which is the Sommerfeld condition
du/dr - iku -> 0; Im d_n > 0 and Re d_n < 0 for every n.
"""
import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from . import specfun
from .errors import CapacityError, ConfigurationError, DomainError

EXTRA_MODES = 40


def default_mode_cutoff(k, R):
    return int(math.ceil(k * R)) + EXTRA_MODES


def dtn_modal_symbol(n, k, R, n_max=specfun.N_MAX):
    """d_n = k H1'(n,kR) / H1(n,kR) for a scalar or array of integer orders."""
    if k <= 0 or R <= 0:
        raise DomainError("k and R must be positive")
    n = np.asarray(n)
    nmax = int(np.abs(n).max()) if n.size else 0
    if nmax > n_max:
        raise CapacityError("order %d exceeds N_max = %d" % (nmax, n_max))
    H, dH = specfun.hankel_table(k * R, nmax, n_max=max(n_max, nmax + 1))
    a = np.abs(n)
    out = k * dH[..., a] / H[..., a]
    return out.item() if out.ndim == 0 else out


@dataclass(frozen=True)
class Trace:
    """Fourier coefficients u_n of a function on the circle r = radius.

    ``coeffs[j]`` belongs to order ``j - N`` where ``N = (len - 1) // 2``.
    """

    radius: float
    coeffs: np.ndarray
    k: float | None = None

    @property
    def n_modes(self):
        return (len(self.coeffs) - 1) // 2

    @property
    def orders(self):
        N = self.n_modes
        return np.arange(-N, N + 1)

    @classmethod
    def from_samples(cls, values, radius, n_modes, k=None):
        """Coefficients from equispaced samples theta_j = 2 pi j / M."""
        values = np.asarray(values, dtype=complex)
        M = values.shape[0]
        if M < 2 * n_modes + 1:
            raise ConfigurationError("need at least 2N+1 samples")
        fh = np.fft.fft(values) / M
        idx = np.arange(-n_modes, n_modes + 1) % M
        return cls(float(radius), fh[idx], k)

    @classmethod
    def from_function(cls, fun, radius, n_modes, k=None, oversample=4):
        M = oversample * (2 * n_modes + 1)
        th = 2 * np.pi * np.arange(M) / M
        vals = fun(radius * np.cos(th), radius * np.sin(th))
        return cls.from_samples(vals, radius, n_modes, k)

    def evaluate(self, theta):
        theta = np.asarray(theta, dtype=float)
        return np.exp(1j * np.multiply.outer(theta, self.orders)) @ self.coeffs


class DtnOperator:
    """Truncated modal DtN map on the circle r = R at wavenumber k."""

    def __init__(self, k, R, n_dtn=None):
        if k <= 0 or R <= 0:
            raise DomainError("k and R must be positive")
        self.k = float(k)
        self.R = float(R)
        self.n_dtn = default_mode_cutoff(k, R) if n_dtn is None else int(n_dtn)
        if self.n_dtn > specfun.N_MAX:
            raise CapacityError(
                "mode cutoff %d exceeds N_max = %d" % (self.n_dtn, specfun.N_MAX)
            )
        self.orders = np.arange(-self.n_dtn, self.n_dtn + 1)
        self.symbols = dtn_modal_symbol(self.orders, self.k, self.R)
        self.symbols.setflags(write=False)

    def symbol(self, n):
        n = int(n)
        if abs(n) > self.n_dtn:
            raise CapacityError("order %d beyond the mode cutoff %d" % (n, self.n_dtn))
        return self.symbols[n + self.n_dtn]

    def _aligned(self, trace):
        if not math.isclose(trace.radius, self.R, rel_tol=1e-12):
            raise ConfigurationError(
                "trace radius %g does not match DtN radius %g" % (trace.radius, self.R)
            )
        if trace.k is not None and not math.isclose(trace.k, self.k, rel_tol=1e-12):
            raise ConfigurationError("trace wavenumber does not match DtN wavenumber")
        N = trace.n_modes
        if N > self.n_dtn:
            raise CapacityError("trace has %d modes, cutoff is %d" % (N, self.n_dtn))
        full = np.zeros(2 * self.n_dtn + 1, dtype=complex)
        full[self.n_dtn - N : self.n_dtn + N + 1] = trace.coeffs
        return full

    def bilinear(self, trace_u, trace_v):
        """<DtN u, v> = 2 pi R sum_n d_n u_n conj(v_n)."""
        u = self._aligned(trace_u)
        v = self._aligned(trace_v)
        return 2 * np.pi * self.R * np.sum(self.symbols * u * np.conj(v))

    def apply(self, trace):
        """Neumann trace of the outgoing extension, as a Trace."""
        u = self._aligned(trace)
        return Trace(self.R, self.symbols * u, self.k)

    def extension_energy(self, inner_radius=None, inner_bc="dirichlet"):
        """e_n with ||E g||^2_{H^1_k} = 2 pi R sum e_n |g_n|^2 for the minimal extension.

        The extension minimizes the weighted H^1 norm over the annulus
        inner_radius < r < R (zero trace or natural condition on the inner
        circle), or over the disk when ``inner_radius`` is None.  It solves
        -Delta u + k^2 u = 0, so its energy is the boundary flux f'(R)/f(R).
        """
        return extension_energy(self.orders, self.k, self.R, inner_radius, inner_bc)

    def continuity_constant(self, inner_radius=None, inner_bc="dirichlet"):
        """Sharp modal C_DtN = max_n |d_n| / e_n for the chosen domain."""
        e = self.extension_energy(inner_radius, inner_bc)
        return float(np.max(np.abs(self.symbols) / e))

    def measure_continuity(self, n_pairs=200, rng=None, inner_radius=None,
                           inner_bc="dirichlet", max_order=None):
        """Largest |<DtN u, v>| / (||u|| ||v||) over random trigonometric pairs."""
        rng = np.random.default_rng(rng)
        e = self.extension_energy(inner_radius, inner_bc)
        N = self.n_dtn if max_order is None else min(max_order, self.n_dtn)
        sel = np.abs(self.orders) <= N
        best = 0.0
        for _ in range(n_pairs):
            u = np.zeros(self.orders.size, complex)
            v = np.zeros_like(u)
            u[sel] = rng.standard_normal(sel.sum()) + 1j * rng.standard_normal(sel.sum())
            v[sel] = rng.standard_normal(sel.sum()) + 1j * rng.standard_normal(sel.sum())
            val = abs(np.sum(self.symbols * u * np.conj(v)))
            nu = math.sqrt(np.sum(e * np.abs(u) ** 2))
            nv = math.sqrt(np.sum(e * np.abs(v) ** 2))
            best = max(best, val / (nu * nv))
        return best


def _mod_ratio_disk(n, z):
    # I_n'(z) / I_n(z) with exponentially scaled values
    i0 = special.ive(n, z)
    ip = 0.5 * (special.ive(n - 1, z) + special.ive(n + 1, z))
    return ip / i0


def extension_energy(orders, k, R, inner_radius=None, inner_bc="dirichlet"):
    n = np.abs(np.asarray(orders)).astype(float)
    z = k * R
    if inner_radius is None:
        ratio = _mod_ratio_disk(n, z)
    else:
        if not 0 < inner_radius < R:
            raise DomainError("inner radius must lie in (0, R)")
        z0 = k * inner_radius
        iR = special.ive(n, z)
        kR = special.kve(n, z)
        diR = 0.5 * (special.ive(n - 1, z) + special.ive(n + 1, z))
        dkR = -0.5 * (special.kve(n - 1, z) + special.kve(n + 1, z))
        if inner_bc == "dirichlet":
            a0 = special.ive(n, z0)
            b0 = special.kve(n, z0)
        elif inner_bc == "neumann":
            a0 = 0.5 * (special.ive(n - 1, z0) + special.ive(n + 1, z0))
            b0 = -0.5 * (special.kve(n - 1, z0) + special.kve(n + 1, z0))
        else:
            raise ConfigurationError("inner_bc must be 'dirichlet' or 'neumann'")
        # f = I_n(kr) - (a0/b0) K_n(kr) e^{2 z0} in scaled form, divided by e^{z}
        w = (a0 / b0) * np.exp(2 * (z0 - z))
        ratio = (diR - w * dkR) / (iR - w * kR)
    e = k * ratio
    bad = ~np.isfinite(e)
    if bad.any():
        e[bad] = np.sqrt(k * k + (n[bad] / R) ** 2)
    return e
