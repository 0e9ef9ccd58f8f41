# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled Bessel table kernel.

Same algorithm as ``_kernels_py``: Miller backward recurrence for J with
the even-sum normalization (or a least-squares match to the Hankel
asymptotics for large x), Neumann series for Y0 and Y1 accumulated on the
same backward pass, then forward recurrence for Y.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, log, sqrt, cos, sin, pow, M_PI

cnp.import_array()

cdef double EULER_GAMMA = 0.57721566490153286061
cdef double CROSSOVER = 25.0
cdef double BIG = 1e200


cdef int miller_start(int nmax, double x) nogil:
    cdef double top = nmax + 2.0
    cdef int m
    if x > top:
        top = x
    m = <int>(top + 20.0 + 12.0 * pow(top, 1.0 / 3.0) + sqrt(40.0 * top))
    return m + (m % 2)


cdef void hankel_asym(int nu, double x, double* jv, double* yv) nogil:
    cdef double mu = 4.0 * nu * nu
    cdef double p = 1.0, q = 0.0, term = 1.0, prev = 1e308, mag
    cdef int k, j
    for k in range(1, 60):
        term = term * (mu - (2 * k - 1) * (2 * k - 1)) / (k * 8.0 * x)
        mag = fabs(term)
        if mag >= prev:
            break
        prev = mag
        j = k // 2
        if k % 2 == 1:
            q += term if j % 2 == 0 else -term
        else:
            p += term if j % 2 == 0 else -term
    cdef double chi = x - (0.5 * nu + 0.25) * M_PI
    cdef double amp = sqrt(2.0 / (M_PI * x))
    jv[0] = amp * (p * cos(chi) - q * sin(chi))
    yv[0] = amp * (p * sin(chi) + q * cos(chi))


cdef void one_point(double x, int ncol, double[:] J, double[:] Y) nogil:
    cdef int m, k, n
    cdef int mstart = miller_start(ncol - 2, x)
    cdef double jp1 = 0.0, jn = 1e-300, jm1
    cdef double even_sum = 0.0, s0 = 0.0, s1 = 0.0, sign, norm, lx
    cdef double j0a, y0a, j1a, y1a, fac
    for n in range(ncol):
        J[n] = 0.0
    for m in range(mstart, 0, -1):
        jm1 = (2.0 * m / x) * jn - jp1
        if m <= ncol - 1:
            J[m] = jn
        if m % 2 == 0:
            k = m // 2
            sign = -1.0 if k % 2 else 1.0
            even_sum += jn
            s0 += sign * jn / k
            s1 += sign * (jm1 - jp1) / k
        jp1 = jn
        jn = jm1
        if fabs(jn) > BIG:
            jn /= BIG
            jp1 /= BIG
            even_sum /= BIG
            s0 /= BIG
            s1 /= BIG
            for n in range(ncol):
                J[n] /= BIG
    J[0] = jn
    norm = jn + 2.0 * even_sum
    for n in range(ncol):
        J[n] /= norm
    s0 /= norm
    s1 /= norm
    if x >= CROSSOVER:
        hankel_asym(0, x, &j0a, &y0a)
        hankel_asym(1, x, &j1a, &y1a)
        fac = (j0a * J[0] + j1a * J[1]) / (J[0] * J[0] + J[1] * J[1])
        for n in range(ncol):
            J[n] *= fac
        Y[0] = y0a
        if ncol > 1:
            Y[1] = y1a
    else:
        lx = log(0.5 * x) + EULER_GAMMA
        Y[0] = (2.0 / M_PI) * lx * J[0] - (4.0 / M_PI) * s0
        if ncol > 1:
            Y[1] = (2.0 / M_PI) * (lx * J[1] - J[0] / x) + (2.0 / M_PI) * s1
    for n in range(1, ncol - 1):
        Y[n + 1] = (2.0 * n / x) * Y[n] - Y[n - 1]


def jy_table(x, int nmax):
    """Return (J, Y) with shape (len(x), nmax + 2) for orders 0..nmax+1."""
    cdef double[:] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t npts = xv.shape[0], i
    cdef int ncol = nmax + 2
    J = np.zeros((npts, ncol))
    Y = np.zeros((npts, ncol))
    cdef double[:, :] Jv = J
    cdef double[:, :] Yv = Y
    with nogil:
        for i in range(npts):
            one_point(xv[i], ncol, Jv[i, :], Yv[i, :])
    return J, Y
