"""Quadrature rules on the reference triangle and interval."""
from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def gauss_interval(npts):
    """Gauss-Legendre points and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(npts)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def triangle_rule(order):
    """Collapsed Gauss rule exact for polynomials of total degree ``order``.

    Reference triangle (0,0), (1,0), (0,1).  Returns (points (n,2), weights).
    """
    n = order // 2 + 2
    u, wu = gauss_interval(n)
    v, wv = gauss_interval(n)
    U, V = np.meshgrid(u, v, indexing="ij")
    W = np.outer(wu, wv) * (1.0 - U)
    pts = np.column_stack([U.ravel(), (V * (1.0 - U)).ravel()])
    return pts, W.ravel()
