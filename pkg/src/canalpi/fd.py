"""Finite-difference stencils and quadrature weights on uniform grids.

All derivative operators are 4th-order accurate, with one-sided stencils of
the same order at and near the boundaries.
"""

from functools import lru_cache

import numpy as np


def fornberg_weights(x0, x, m):
    """Weights of the m-th derivative at x0 from samples at abscissae x.

    Classic recursive algorithm; exact for polynomials of degree len(x)-1.
    """
    x = np.asarray(x, dtype=float)
    npts = len(x)
    c = np.zeros((npts, m + 1))
    c1 = 1.0
    c4 = x[0] - x0
    c[0, 0] = 1.0
    for i in range(1, npts):
        mn = min(i, m)
        c2 = 1.0
        c5 = c4
        c4 = x[i] - x0
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c[:, m]


@lru_cache(maxsize=64)
def _diff_matrix_unit(n, deriv):
    """Dense n x n differentiation matrix for unit spacing."""
    if deriv not in (1, 2):
        raise ValueError("only first and second derivatives are provided")
    if n < 6:
        raise ValueError("need at least 6 nodes for 4th-order stencils")
    width = 5 if deriv == 1 else 6
    half = 2
    mat = np.zeros((n, n))
    idx = np.arange(n)
    for i in range(n):
        if half <= i <= n - 1 - half:
            lo = i - half
            w = 5
        else:
            lo = 0 if i < half else n - width
            w = width
        cols = idx[lo:lo + w]
        mat[i, cols] = fornberg_weights(float(i), cols.astype(float), deriv)
    return mat


def diff_matrix(n, dx, deriv=1):
    """4th-order differentiation matrix on n uniform nodes with spacing dx."""
    return _diff_matrix_unit(n, deriv) / dx**deriv


def derivative(f, dx, deriv=1):
    """Apply the 4th-order derivative operator to nodal samples f."""
    f = np.asarray(f, dtype=float)
    return diff_matrix(len(f), dx, deriv) @ f


@lru_cache(maxsize=64)
def _simpson_unit(n):
    if n < 3:
        raise ValueError("need at least 3 nodes for Simpson weights")
    w = np.zeros(n)
    if n % 2 == 1:
        w[0] = w[-1] = 1.0 / 3.0
        w[1:-1:2] = 4.0 / 3.0
        w[2:-1:2] = 2.0 / 3.0
    else:
        # even node count: composite Simpson up to n-4, 3/8 rule on the last
        # three intervals
        if n < 8:
            raise ValueError("even node counts below 8 are not supported")
        head = _simpson_unit(n - 3)
        w[:n - 3] += head
        w[n - 4:] += np.array([3.0 / 8.0, 9.0 / 8.0, 9.0 / 8.0, 3.0 / 8.0])
    return w


def simpson_weights(n, dx):
    """Quadrature weights (composite Simpson) for n uniform nodes."""
    return _simpson_unit(n) * dx


def integrate(f, dx):
    """Composite-Simpson integral of nodal samples f on a uniform grid."""
    f = np.asarray(f, dtype=float)
    return float(simpson_weights(len(f), dx) @ f)
