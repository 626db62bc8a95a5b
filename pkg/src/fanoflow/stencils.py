"""High-order one-dimensional finite-difference operators on uniform grids.

Derivatives of grid fields are taken as tensor products of these 1-D
operators, so a mixed partial of total order four is two matrix
applications, one per axis.  Interior rows use centered stencils, rows
near the ends use shifted windows that are one point wider to keep the
formal accuracy at least fourth order.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

# Centered stencil widths giving 4th-order accuracy for derivative order 1..4.
_CENTRAL_WIDTH = {1: 5, 2: 5, 3: 7, 4: 7}


def fornberg_weights(z: float, x: np.ndarray, m: int) -> np.ndarray:
    """Weights of the m-th derivative at z from arbitrary nodes x (Fornberg 1988)."""
    n = len(x)
    c = np.zeros((n, m + 1))
    c1 = 1.0
    c4 = x[0] - z
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, m)
        c2 = 1.0
        c5 = c4
        c4 = x[i] - z
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
def derivative_matrix(n: int, spacing: float, order: int) -> np.ndarray:
    """Dense (n, n) matrix applying d^order/dx^order along one uniform axis.

    n is the node count.  Apply along axis 0 of a field via ``D @ f`` and along
    axis 1 via ``f @ D.T``.
    """
    if order < 1 or order > 4:
        raise ValueError("derivative order must be in 1..4")
    width_c = _CENTRAL_WIDTH[order]
    width_b = order + 5  # shifted windows, formal accuracy 5
    if n < width_b:
        raise ValueError(f"need at least {width_b} nodes for order-{order} stencils")
    half = width_c // 2
    mat = np.zeros((n, n))
    idx = np.arange(n, dtype=float)
    for i in range(n):
        if half <= i < n - half:
            lo, w = i - half, width_c
        else:
            w = width_b
            lo = min(max(i - w // 2, 0), n - w)
        mat[i, lo : lo + w] = fornberg_weights(float(i), idx[lo : lo + w], order)
    mat /= spacing**order
    return mat


@lru_cache(maxsize=32)
def central_derivative_matrix(n: int, spacing: float, order: int) -> np.ndarray:
    """Derivative matrix using only width-5 centered stencils (orders 1 and 2).

    Rows closer than two nodes to either end are left zero; callers must
    supply ghost values there.  Unlike the one-sided closures of
    ``derivative_matrix``, products of these operators with exponentially
    large diffusion coefficients keep a stable spectrum, which is what the
    time integrator needs.
    """
    if order not in (1, 2):
        raise ValueError("central stencils are provided for orders 1 and 2 only")
    half = 2
    mat = np.zeros((n, n))
    idx = np.arange(n, dtype=float)
    for i in range(half, n - half):
        mat[i, i - half : i + half + 1] = fornberg_weights(
            float(i), idx[i - half : i + half + 1], order
        )
    mat /= spacing**order
    return mat


def partial_derivative(field: np.ndarray, spacing: float, ax0: int, ax1: int) -> np.ndarray:
    """Mixed partial d^(ax0+ax1) field / dx0^ax0 dx1^ax1 on a uniform 2-D grid."""
    out = field
    if ax0:
        out = derivative_matrix(field.shape[0], spacing, ax0) @ out
    if ax1:
        out = out @ derivative_matrix(field.shape[1], spacing, ax1).T
    return np.ascontiguousarray(out)
