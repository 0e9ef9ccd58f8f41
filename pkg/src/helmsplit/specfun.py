"""Cylindrical Bessel and Hankel functions of integer order.

Values come from a table kernel (compiled when available, numpy otherwise)
that returns J_n and Y_n for n = 0..nmax+1 at a batch of positive arguments.
Negative orders use the reflection C_{-n} = (-1)^n C_n and derivatives use
C'_n = (C_{n-1} - C_{n+1}) / 2.
"""
import os

import numpy as np

from .errors import CapacityError, ConfigurationError, DomainError

N_MAX = 256

if os.environ.get("HELMSPLIT_PURE_PYTHON"):
    from . import _kernels_py as _backend
    BACKEND = "python"
else:
    try:
        from . import _kernels as _backend
        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on build
        from . import _kernels_py as _backend
        BACKEND = "python"

KINDS = ("J", "Y", "H1")


def _check_args(x, nmax, n_max):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.size and not np.all(x > 0):
        raise DomainError("Bessel argument must be positive, got min %g" % x.min())
    if nmax > n_max:
        raise CapacityError("order %d exceeds N_max = %d" % (nmax, n_max))
    return x


def jy_table(x, nmax, n_max=N_MAX):
    """J_n(x), Y_n(x) for n = 0..nmax+1; arrays of shape x.shape + (nmax+2,)."""
    xa = np.asarray(x, dtype=float)
    flat = _check_args(xa.ravel(), nmax, n_max)
    J, Y = _backend.jy_table(flat, int(nmax))
    bad = ~np.isfinite(Y)
    if bad.any():
        # Y_n is negative and decreasing past n ~ x; once the upward
        # recurrence overflows the rest of the row is -inf, not inf - inf
        Y = np.where(np.logical_or.accumulate(bad, axis=-1), -np.inf, Y)
    shape = xa.shape + (nmax + 2,)
    return J.reshape(shape), Y.reshape(shape)


def cyl_table(x, nmax, n_max=N_MAX):
    """Values and derivatives for n = 0..nmax.

    Returns (J, Y, dJ, dY), each of shape x.shape + (nmax+1,).
    """
    J, Y = jy_table(x, nmax, n_max)
    dJ = np.empty_like(J[..., : nmax + 1])
    dY = np.empty_like(dJ)
    dJ[..., 0] = -J[..., 1]
    dY[..., 0] = -Y[..., 1]
    with np.errstate(invalid="ignore", over="ignore"):
        dJ[..., 1:] = 0.5 * (J[..., : nmax] - J[..., 2 : nmax + 2])
        dY[..., 1:] = 0.5 * (Y[..., : nmax] - Y[..., 2 : nmax + 2])
    return J[..., : nmax + 1], Y[..., : nmax + 1], dJ, dY


def hankel_table(x, nmax, n_max=N_MAX):
    """H1_n(x) and its derivative for n = 0..nmax."""
    J, Y, dJ, dY = cyl_table(x, nmax, n_max)
    return _complex(J, Y), _complex(dJ, dY)


def _complex(re, im):
    # re + 1j*im would turn an overflowed im into nan through 0*inf
    z = np.empty(np.shape(re), complex)
    z.real, z.imag = re, im
    return z


def signed_orders(values, orders):
    """Pick columns for possibly negative orders from a table over n >= 0."""
    orders = np.asarray(orders)
    a = np.abs(orders)
    sign = np.where((orders < 0) & (a % 2 == 1), -1.0, 1.0)
    return values[..., a] * sign


def eval_bessel(kind, order, x, derivative=False, n_max=N_MAX):
    """Evaluate J, Y or H1 of integer order at positive x.

    ``x`` may be a scalar or array.  With ``derivative=True`` the
    x-derivative is returned instead.
    """
    if kind not in KINDS:
        raise ConfigurationError("kind must be one of %s" % (KINDS,))
    order = int(order)
    if abs(order) > n_max:
        raise CapacityError("order %d exceeds N_max = %d" % (order, n_max))
    # the derivative needs one extra order from the table
    J, Y, dJ, dY = cyl_table(x, abs(order), n_max=max(n_max, abs(order) + 1))
    if derivative:
        J, Y = dJ, dY
    j = signed_orders(J, order)
    y = signed_orders(Y, order)
    if kind == "J":
        out = j
    elif kind == "Y":
        out = y
    else:
        out = _complex(j, y)
    if np.ndim(x) == 0:
        return out.item()
    return out


def besselj(n, x):
    return eval_bessel("J", n, x)


def bessely(n, x):
    return eval_bessel("Y", n, x)


def hankel1(n, x):
    return eval_bessel("H1", n, x)


def hankel1p(n, x):
    return eval_bessel("H1", n, x, derivative=True)
