"""One-dimensional polynomial bases and Gauss-Lobatto-Legendre quadrature.

Provides GLL rules on [-1, 1], nodal (Lagrange) and modal (Legendre
hierarchical) bases, transforms between the two, and the quadrature
point-count rules used to dealias polynomial nonlinearities.
"""

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

__all__ = [
    "QuadratureRule",
    "Basis",
    "gll_rule",
    "gauss_rule",
    "exactness_degree",
    "points_for_degree",
    "min_quadrature_points",
    "nodal_basis",
    "modal_basis",
    "lagrange_eval",
    "lagrange_matrix",
    "lagrange_deriv_matrix",
    "legendre_matrix",
    "modal_transform",
]

_NEWTON_TOL = 1e-14


def legendre(n, x):
    """Evaluate the Legendre polynomial P_n and its first derivative at x.

    Uses the three-term recurrence; x may be a scalar or array.
    """
    x = np.asarray(x, dtype=float)
    p_prev = np.ones_like(x)
    if n == 0:
        return p_prev, np.zeros_like(x)
    p = x.copy()
    for k in range(1, n):
        p, p_prev = ((2 * k + 1) * x * p - k * p_prev) / (k + 1), p
    # derivative from (1 - x^2) P_n' = n (P_{n-1} - x P_n)
    dp = np.empty_like(x)
    interior = np.abs(x) < 1.0
    xi = x[interior]
    dp[interior] = n * (p_prev[interior] - xi * p[interior]) / (1.0 - xi * xi)
    # endpoint limit: P_n'(+-1) = (+-1)^(n-1) n(n+1)/2
    edge = ~interior
    dp[edge] = np.sign(x[edge]) ** (n - 1) * n * (n + 1) / 2.0
    return p, dp


def legendre_matrix(order, x):
    """Matrix L[i, p] = P_p(x_i) for p = 0..order."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.empty((x.size, order + 1))
    out[:, 0] = 1.0
    if order >= 1:
        out[:, 1] = x
    for k in range(1, order):
        out[:, k + 1] = ((2 * k + 1) * x * out[:, k] - k * out[:, k - 1]) / (k + 1)
    return out


@dataclass(frozen=True)
class QuadratureRule:
    """Abscissae and weights of a quadrature rule on [-1, 1]."""

    points: np.ndarray
    weights: np.ndarray

    @property
    def count(self):
        return self.points.size

    def integrate(self, values):
        """Apply the rule to function values sampled at the points."""
        return float(np.dot(self.weights, values))


@lru_cache(maxsize=None)
def _gll_cached(q):
    if q == 2:
        return np.array([-1.0, 1.0]), np.array([1.0, 1.0])
    n = q - 1
    # interior nodes are roots of P'_{q-1}; Chebyshev-Lobatto initial guesses
    x = np.cos(np.pi * np.arange(1, q - 1) / n)
    for _ in range(100):
        p, dp = legendre(n, x)
        # Newton on P' with P'' from the Legendre ODE
        d2p = (2.0 * x * dp - n * (n + 1) * p) / (1.0 - x * x)
        dx = dp / d2p
        x = x - dx
        if np.max(np.abs(dx)) < _NEWTON_TOL:
            break
    points = np.concatenate(([-1.0], np.sort(x), [1.0]))
    p_end, _ = legendre(n, points)
    weights = 2.0 / (q * n * p_end**2)
    return points, weights


def gll_rule(q):
    """Gauss-Lobatto-Legendre rule with q points, exact to degree 2q - 3.

    Raises ValueError for q < 2 (a Lobatto rule needs both endpoints).
    """
    if q < 2:
        raise ValueError(f"GLL rule needs at least 2 points, got {q}")
    points, weights = _gll_cached(int(q))
    return QuadratureRule(points.copy(), weights.copy())


def gauss_rule(q):
    """Plain Gauss-Legendre rule (exact to degree 2q - 1); test oracle only."""
    if q < 1:
        raise ValueError(f"Gauss rule needs at least 1 point, got {q}")
    points, weights = np.polynomial.legendre.leggauss(int(q))
    return QuadratureRule(points, weights)


def exactness_degree(q):
    """Highest polynomial degree a q-point GLL rule integrates exactly."""
    return 2 * q - 3


def points_for_degree(degree):
    """Fewest GLL points whose exactness degree covers the given degree."""
    return max(2, -(-(degree + 3) // 2))


# integrand-degree bound numerators: Q >= (num + den*P) / 2 per nonlinearity
_QMIN_BOUNDS = {1: (1, 3), 2: (3, 3), 3: (4, 3)}


def min_quadrature_points(p, m):
    """Minimum GLL point count to integrate a degree-m nonlinearity exactly.

    m = 1 covers the order-P field itself (bound (P + 3)/2), m = 2 the
    quadratic-nonlinearity products (bound 3P/2 + 3/2) and m = 3 the cubic
    ones (bound 2P + 3/2); the bound is rounded up to the next integer.
    """
    if p < 1:
        raise ValueError(f"polynomial order must be >= 1, got {p}")
    if m not in _QMIN_BOUNDS:
        raise ValueError(f"unsupported nonlinearity degree {m}, expected 1, 2 or 3")
    coef, add = _QMIN_BOUNDS[m]
    num = coef * p + add
    return max(2, -(-num // 2))


@dataclass(frozen=True)
class Basis:
    """A 1D polynomial basis of order P on [-1, 1].

    kind 'nodal' is the Lagrange basis on GLL points, kind 'modal' the
    Legendre hierarchical basis.
    """

    order: int
    kind: str
    nodes: np.ndarray = field(default=None)

    @property
    def size(self):
        return self.order + 1


def nodal_basis(p):
    if p < 1:
        raise ValueError(f"basis order must be >= 1, got {p}")
    return Basis(order=p, kind="nodal", nodes=gll_rule(p + 1).points)


def modal_basis(p):
    if p < 1:
        raise ValueError(f"basis order must be >= 1, got {p}")
    return Basis(order=p, kind="modal")


def _barycentric_weights(nodes):
    diff = nodes[:, None] - nodes[None, :]
    np.fill_diagonal(diff, 1.0)
    return 1.0 / diff.prod(axis=1)


def lagrange_matrix(nodes, x):
    """Cardinal function values L[i, k] = ell_k(x_i) for nodes `nodes`."""
    nodes = np.asarray(nodes, dtype=float)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    w = _barycentric_weights(nodes)
    out = np.empty((x.size, nodes.size))
    for i, xi in enumerate(x):
        d = xi - nodes
        hit = np.isclose(d, 0.0, atol=1e-14)
        if hit.any():
            out[i] = 0.0
            out[i, np.argmax(hit)] = 1.0
        else:
            t = w / d
            out[i] = t / t.sum()
    return out


def lagrange_deriv_matrix(nodes, x):
    """Cardinal derivative values D[i, k] = ell_k'(x_i)."""
    nodes = np.asarray(nodes, dtype=float)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    n = nodes.size
    out = np.zeros((x.size, n))
    for i, xi in enumerate(x):
        for k in range(n):
            acc = 0.0
            for m in range(n):
                if m == k:
                    continue
                term = 1.0 / (nodes[k] - nodes[m])
                for j in range(n):
                    if j == k or j == m:
                        continue
                    term *= (xi - nodes[j]) / (nodes[k] - nodes[j])
                acc += term
            out[i, k] = acc
    return out


def lagrange_eval(basis, k, xi):
    """Value of cardinal function k of a nodal basis at xi."""
    if basis.kind != "nodal":
        raise ValueError("lagrange_eval needs a nodal basis")
    if not 0 <= k <= basis.order:
        raise ValueError(f"cardinal index {k} out of range 0..{basis.order}")
    return float(lagrange_matrix(basis.nodes, [xi])[0, k])


@lru_cache(maxsize=None)
def _modal_transform_cached(p):
    nodes = gll_rule(p + 1).points
    vand = legendre_matrix(p, nodes)
    return np.linalg.inv(vand), vand


def modal_transform(p):
    """Transform pair (R, R^-1) between nodal values and Legendre coefficients.

    R maps values at the P+1 GLL nodes to Legendre hierarchical coefficients;
    R^-1 is the Vandermonde matrix that evaluates those coefficients back at
    the nodes.
    """
    if p < 1:
        raise ValueError(f"order must be >= 1, got {p}")
    r, rinv = _modal_transform_cached(int(p))
    return r.copy(), rinv.copy()
