"""Pure numpy implementation of the Bessel table kernel.

Mirrors ``_kernels.pyx`` line for line, vectorized over the argument array
instead of looped.  Used when the compiled extension is unavailable.
"""
import math

import numpy as np

EULER_GAMMA = 0.57721566490153286061
ASYMPTOTIC_CROSSOVER = 25.0
_BIG = 1e200


def miller_start(nmax, x):
    """Starting index for the backward recurrence."""
    top = max(nmax + 2.0, x)
    m = int(top + 20.0 + 12.0 * top ** (1.0 / 3.0) + math.sqrt(40.0 * top))
    return m + (m % 2)


def hankel_asymptotic(nu, x):
    """Large-argument P, Q series for integer order nu (0 or 1)."""
    x = np.asarray(x, dtype=float)
    mu = 4.0 * nu * nu
    p = np.ones_like(x)
    q = np.zeros_like(x)
    term = np.ones_like(x)
    active = np.ones(x.shape, dtype=bool)
    prev = np.full(x.shape, np.inf)
    for k in range(1, 60):
        term = term * (mu - (2 * k - 1) ** 2) / (k * 8.0 * x)
        mag = np.abs(term)
        # stop each lane at its smallest term
        active &= mag < prev
        prev = np.where(active, mag, prev)
        upd = np.where(active, term, 0.0)
        if k % 2 == 1:
            q += upd * (1 if (k // 2) % 2 == 0 else -1)
        else:
            p += upd * (1 if (k // 2) % 2 == 0 else -1)
        if not active.any():
            break
    chi = x - (0.5 * nu + 0.25) * math.pi
    amp = np.sqrt(2.0 / (math.pi * x))
    c, s = np.cos(chi), np.sin(chi)
    return amp * (p * c - q * s), amp * (p * s + q * c)


def jy_table(x, nmax):
    """Return (J, Y) with shape (len(x), nmax + 2) for orders 0..nmax+1."""
    x = np.ascontiguousarray(x, dtype=float)
    npts = x.shape[0]
    ncol = nmax + 2
    J = np.zeros((npts, ncol))
    Y = np.zeros((npts, ncol))
    if npts == 0:
        return J, Y

    starts = np.array([miller_start(nmax, xi) for xi in x])
    mtop = int(starts.max())
    big = x >= ASYMPTOTIC_CROSSOVER

    # backward recurrence, each lane switched on at its own start index
    jp1 = np.zeros(npts)
    jn = np.zeros(npts)
    even_sum = np.zeros(npts)
    # Neumann sums for Y0 and Y1, accumulated on the same pass
    s0 = np.zeros(npts)
    s1 = np.zeros(npts)
    jnext_odd = np.zeros(npts)  # J_{2k+1} seen just before J_{2k}
    for m in range(mtop, 0, -1):
        start_now = starts == m
        jn = np.where(start_now, 1e-300, jn)
        jp1 = np.where(start_now, 0.0, jp1)
        # jn holds J_m, jp1 holds J_{m+1}; produce J_{m-1}
        jm1 = (2.0 * m / x) * jn - jp1
        if m <= ncol - 1:
            J[:, m] = jn
        if m % 2 == 0:
            k = m // 2
            sign = -1.0 if k % 2 else 1.0
            even_sum += jn
            s0 += sign * jn / k
            # (J_{2k-1} - J_{2k+1}) / k, J_{2k-1} = jm1
            s1 += sign * (jm1 - jp1) / k
        jp1, jn = jn, jm1
        scale = np.abs(jn) > _BIG
        if scale.any():
            f = np.where(scale, 1.0 / _BIG, 1.0)
            jn *= f
            jp1 *= f
            even_sum *= f
            s0 *= f
            s1 *= f
            J[:, : ncol] *= f[:, None]
    J[:, 0] = jn
    norm = jn + 2.0 * even_sum
    J /= norm[:, None]
    s0 /= norm
    s1 /= norm

    lx = np.log(0.5 * x) + EULER_GAMMA
    y0 = (2.0 / math.pi) * lx * J[:, 0] - (4.0 / math.pi) * s0
    y1 = (2.0 / math.pi) * (lx * J[:, 1] - J[:, 0] / x) + (2.0 / math.pi) * s1

    if big.any():
        xb = x[big]
        j0a, y0a = hankel_asymptotic(0, xb)
        j1a, y1a = hankel_asymptotic(1, xb)
        j0m, j1m = J[big, 0], J[big, 1]
        # least-squares rescale of the Miller sequence against J0, J1
        fac = (j0a * j0m + j1a * j1m) / (j0m * j0m + j1m * j1m)
        J[big] *= fac[:, None]
        y0[big] = y0a
        y1[big] = y1a

    Y[:, 0] = y0
    if ncol > 1:
        Y[:, 1] = y1
    with np.errstate(over="ignore", invalid="ignore"):
        for n in range(1, ncol - 1):
            Y[:, n + 1] = (2.0 * n / x) * Y[:, n] - Y[:, n - 1]
    return J, Y
