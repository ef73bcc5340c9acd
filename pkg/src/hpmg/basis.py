"""One-dimensional nodal building blocks.

Legendre-Gauss-Lobatto (LGL) nodes carry the nodal basis, Gauss-Legendre
points carry the quadrature, and every d-dimensional operator in the
package is a tensor product of the small matrices produced here.
"""
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import DegenerateBasisError, InvalidOrderError

_NEWTON_TOL = 1e-14
_NEWTON_MAXIT = 100


def _legendre(n, x):
    """P_n(x) and P_{n-1}(x) by the three-term recurrence."""
    x = np.asarray(x, dtype=float)
    p_prev = np.ones_like(x)
    if n == 0:
        return p_prev, np.zeros_like(x)
    p = x.copy()
    for k in range(2, n + 1):
        p_prev, p = p, ((2 * k - 1) * x * p - (k - 1) * p_prev) / k
    return p, p_prev


def _legendre_table(nmax, x):
    """Columns P_0..P_nmax and their derivatives evaluated at x."""
    x = np.asarray(x, dtype=float)
    P = np.zeros((x.size, nmax + 1))
    dP = np.zeros((x.size, nmax + 1))
    P[:, 0] = 1.0
    if nmax >= 1:
        P[:, 1] = x
        dP[:, 1] = 1.0
    for k in range(2, nmax + 1):
        P[:, k] = ((2 * k - 1) * x * P[:, k - 1] - (k - 1) * P[:, k - 2]) / k
        # P'_k = P'_{k-2} + (2k-1) P_{k-1}
        dP[:, k] = dP[:, k - 2] + (2 * k - 1) * P[:, k - 1]
    return P, dP


def _mirror(half, n, odd_center):
    """Assemble n symmetric points from the ascending negative half."""
    out = np.empty(n)
    m = half.size
    out[:m] = half
    out[n - m:] = -half[::-1]
    if odd_center:
        out[m] = 0.0
    return out


@lru_cache(maxsize=None)
def _lgl(p):
    n = p + 1
    # Chebyshev-Gauss-Lobatto initial guesses, ascending
    x = -np.cos(np.pi * np.arange(n) / p)
    for _ in range(_NEWTON_MAXIT):
        P, P_prev = _legendre(p, x)
        # Newton on (1 - x^2) P'_p(x) = 0 written via the recurrence
        dx = (x * P - P_prev) / (n * P)
        x = x - dx
        if np.max(np.abs(dx)) < _NEWTON_TOL:
            break
    m = n // 2
    nodes = _mirror(0.5 * (x[:m] - x[::-1][:m]), n, n % 2 == 1)
    nodes[0], nodes[-1] = -1.0, 1.0
    P, _ = _legendre(p, nodes)
    weights = 2.0 / (p * n * P**2)
    weights = 0.5 * (weights + weights[::-1])
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def lgl_nodes(p):
    """The p+1 Legendre-Gauss-Lobatto points on [-1, 1], ascending.

    Raises
    ------
    InvalidOrderError
        If ``p < 1``.
    """
    if int(p) != p or p < 1:
        raise InvalidOrderError(f"polynomial order must be >= 1, got {p}")
    return _lgl(int(p))[0]


def lgl_weights(p):
    """Gauss-Lobatto quadrature weights belonging to `lgl_nodes`."""
    if int(p) != p or p < 1:
        raise InvalidOrderError(f"polynomial order must be >= 1, got {p}")
    return _lgl(int(p))[1]


@lru_cache(maxsize=None)
def _gauss(n):
    if n == 1:
        x, w = np.array([0.0]), np.array([2.0])
    else:
        i = np.arange(1, n + 1)
        x = -np.cos(np.pi * (i - 0.25) / (n + 0.5))
        for _ in range(_NEWTON_MAXIT):
            P, P_prev = _legendre(n, x)
            dP = n * (x * P - P_prev) / (x**2 - 1.0)
            dx = P / dP
            x = x - dx
            if np.max(np.abs(dx)) < _NEWTON_TOL:
                break
        m = n // 2
        x = _mirror(0.5 * (x[:m] - x[::-1][:m]), n, n % 2 == 1)
        P, P_prev = _legendre(n, x)
        dP = n * (x * P - P_prev) / (x**2 - 1.0)
        w = 2.0 / ((1.0 - x**2) * dP**2)
        w = 0.5 * (w + w[::-1])
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def gauss_quadrature(n):
    """Gauss-Legendre points and weights on [-1, 1].

    Exact for polynomials up to degree ``2n - 1``.
    """
    if int(n) != n or n < 1:
        raise InvalidOrderError(f"number of quadrature points must be >= 1, got {n}")
    return _gauss(int(n))


def _check_distinct(nodes):
    nodes = np.asarray(nodes, dtype=float)
    if np.unique(nodes).size != nodes.size:
        raise DegenerateBasisError("interpolation nodes must be distinct")
    return nodes


def lagrange_eval(nodes, j, x):
    """Value at ``x`` of the j-th Lagrange cardinal polynomial on ``nodes``."""
    nodes = _check_distinct(nodes)
    if not 0 <= j < nodes.size:
        raise IndexError(f"basis index {j} out of range for {nodes.size} nodes")
    others = np.delete(nodes, j)
    return float(np.prod((x - others) / (nodes[j] - others)))


def _cardinal_matrices(nodes, points):
    """Values and derivatives of all cardinal polynomials at ``points``.

    Goes through the Legendre modal basis: V c = I on the nodes, so the
    cardinal functions are P(x) V^{-1}. Well conditioned on LGL nodes.
    """
    nodes = _check_distinct(nodes)
    p = nodes.size - 1
    V, _ = _legendre_table(p, nodes)
    P, dP = _legendre_table(p, points)
    Vinv = np.linalg.inv(V)
    return P @ Vinv, dP @ Vinv


def interp_matrix_1d(basis, to_points):
    """Matrix M with ``M[i, j] = phi_j(to_points[i])`` for the basis' nodes."""
    to_points = np.atleast_1d(np.asarray(to_points, dtype=float))
    nodes = basis.nodes if isinstance(basis, TensorBasis1D) else np.asarray(basis, dtype=float)
    M, _ = _cardinal_matrices(nodes, to_points)
    # exact cardinal property where a target point hits a node
    hit = np.isclose(to_points[:, None], nodes[None, :], rtol=0.0, atol=1e-15)
    rows = hit.any(axis=1)
    M[rows] = hit[rows].astype(float)
    return M


@dataclass(frozen=True)
class TensorBasis1D:
    """LGL nodal basis of one order together with its Gauss quadrature.

    ``eval_at_quad[q, j]`` is phi_j at quadrature point q and
    ``deriv_at_quad[q, j]`` its derivative, both on the reference [-1, 1].
    """

    order: int
    n_quad: int
    nodes: np.ndarray = field(repr=False)
    quad_points: np.ndarray = field(repr=False)
    quad_weights: np.ndarray = field(repr=False)
    eval_at_quad: np.ndarray = field(repr=False)
    deriv_at_quad: np.ndarray = field(repr=False)

    @property
    def n(self):
        return self.order + 1


@lru_cache(maxsize=None)
def tensor_basis(order, n_quad=None):
    """Cached `TensorBasis1D`; defaults to ``order + 1`` Gauss points."""
    nodes = lgl_nodes(order)
    n_quad = order + 1 if n_quad is None else int(n_quad)
    xq, wq = gauss_quadrature(n_quad)
    B, D = _cardinal_matrices(nodes, xq)
    for a in (B, D):
        a.setflags(write=False)
    return TensorBasis1D(order, n_quad, nodes, xq, wq, B, D)
