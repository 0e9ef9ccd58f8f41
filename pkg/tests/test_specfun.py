import mpmath
import numpy as np
import pytest

from helmsplit import specfun
from helmsplit.errors import CapacityError, ConfigurationError, DomainError

mpmath.mp.dps = 30


def mp_j(n, x):
    return float(mpmath.besselj(n, x))


def mp_y(n, x):
    return float(mpmath.bessely(n, x))


@pytest.mark.parametrize("x", [1e-3, 0.37, 1.0, 4.5, 12.0, 24.9, 25.1, 80.0, 700.0, 1e4])
@pytest.mark.parametrize("n", [0, 1, 2, 7, 30, 120, 200])
def test_against_mpmath(n, x):
    j = specfun.besselj(n, x)
    y = specfun.bessely(n, x)
    ej, ey = mp_j(n, x), mp_y(n, x)
    if np.isfinite(ey) and abs(ey) < 1e300:
        assert abs(y - ey) <= 1e-10 * abs(ey)
    if abs(ej) < 1e-290:
        assert abs(j) < 1e-280
        return
    # in the oscillatory region J is measured against the envelope |H_n|,
    # otherwise relative to itself
    scale = float(abs(mpmath.hankel1(n, x))) if x > n else abs(ej)
    assert abs(j - ej) <= 1e-10 * scale


@pytest.mark.parametrize("n,x", [(0, 0.5), (3, 2.0), (10, 33.0), (50, 40.0)])
def test_derivatives_against_mpmath(n, x):
    dj = specfun.eval_bessel("J", n, x, derivative=True)
    dy = specfun.eval_bessel("Y", n, x, derivative=True)
    assert abs(dj - float(mpmath.besselj(n, x, derivative=1))) <= 1e-10 * max(abs(dj), 1e-3)
    assert abs(dy - float(mpmath.bessely(n, x, derivative=1))) <= 1e-10 * abs(dy)


def test_small_argument_limits():
    assert specfun.besselj(0, 1e-12) == pytest.approx(1.0, abs=1e-15)
    assert abs(specfun.besselj(1, 1e-12)) < 1e-11


def test_first_zero_of_j0():
    # bisection on the mpmath series gives the zero; our value must vanish there
    f = lambda t: mpmath.besselj(0, t)  # noqa: E731
    z = float(mpmath.findroot(f, (2.3, 2.5), solver="bisect"))
    assert z == pytest.approx(2.404825557695773, abs=1e-14)
    assert abs(specfun.besselj(0, 2.404825557695773)) < 1e-9


def test_wronskian_log_grid():
    x = np.logspace(-2, 3, 60)
    J, Y, dJ, dY = specfun.cyl_table(x, 60)
    W = J * dY - dJ * Y
    target = 2 / (np.pi * x)[:, None]
    ok = np.isfinite(W) & (np.abs(Y) < 1e250)
    assert np.max(np.abs(W[ok] / np.broadcast_to(target, W.shape)[ok] - 1)) < 1e-10


def test_reflection_and_hankel():
    x = np.array([0.3, 2.0, 17.0])
    for n in (1, 2, 5):
        for kind in ("J", "Y", "H1"):
            a = specfun.eval_bessel(kind, -n, x)
            b = specfun.eval_bessel(kind, n, x)
            assert np.allclose(a, (-1) ** n * b, rtol=0, atol=0)
    h = specfun.hankel1(4, x)
    assert np.array_equal(h.imag, specfun.bessely(4, x))
    assert np.array_equal(h.real, specfun.besselj(4, x))


def test_upward_recurrence_consistency():
    x = 40.0
    J = np.array([specfun.besselj(n, x) for n in range(41)])
    for n in range(1, 39):
        assert abs(J[n + 1] - (2 * n / x * J[n] - J[n - 1])) <= 1e-8


def test_overflowed_hankel_keeps_real_part():
    H, _ = specfun.hankel_table(0.5, 250)
    assert np.all(np.isfinite(H.real))
    assert np.isinf(H.imag[-1])


def test_errors():
    with pytest.raises(DomainError):
        specfun.besselj(0, 0.0)
    with pytest.raises(DomainError):
        specfun.besselj(0, -1.0)
    with pytest.raises(CapacityError):
        specfun.besselj(specfun.N_MAX + 1, 1.0)
    with pytest.raises(ConfigurationError):
        specfun.eval_bessel("K", 0, 1.0)
