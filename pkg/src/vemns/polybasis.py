"""Scaled monomial bases and polygon quadrature.

Scalar monomials are ``m_a(x) = ((x - xc) / h) ** alpha_a`` ordered by total
degree, then by decreasing power of the first coordinate::

    1, xi, eta, xi^2, xi*eta, eta^2, xi^3, ...

Vector fields in ``[P_k]^2`` use the index ``c * n_k + a`` (component ``c``,
scalar monomial ``a``).
"""
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre


def n_monomials(k):
    return (k + 1) * (k + 2) // 2


@lru_cache(maxsize=None)
def exponents(k):
    """Multi-indices ``(a, b)`` with ``a + b <= k``."""
    return tuple((d - j, j) for d in range(k + 1) for j in range(d + 1))


def monomials(xi, k):
    """Values of the monomials at scaled points ``xi`` (npts, 2) -> (npts, nk)."""
    xi = np.atleast_2d(xi)
    ex = np.array(exponents(k))
    return xi[:, None, 0] ** ex[None, :, 0] * xi[:, None, 1] ** ex[None, :, 1]


def monomial_gradients(xi, k):
    """Gradients with respect to the scaled variable, shape (npts, nk, 2)."""
    xi = np.atleast_2d(xi)
    ex = np.array(exponents(k))
    a, b = ex[:, 0], ex[:, 1]
    x, y = xi[:, None, 0], xi[:, None, 1]
    gx = np.where(a > 0, a * x ** np.maximum(a - 1, 0) * y ** b, 0.0)
    gy = np.where(b > 0, b * x ** a * y ** np.maximum(b - 1, 0), 0.0)
    return np.stack([gx, gy], axis=-1)


def monomial_laplacians(xi, k):
    """Laplacians with respect to the scaled variable, shape (npts, nk)."""
    xi = np.atleast_2d(xi)
    ex = np.array(exponents(k))
    a, b = ex[:, 0], ex[:, 1]
    x, y = xi[:, None, 0], xi[:, None, 1]
    lx = np.where(a > 1, a * (a - 1) * x ** np.maximum(a - 2, 0) * y ** b, 0.0)
    ly = np.where(b > 1, b * (b - 1) * x ** a * y ** np.maximum(b - 2, 0), 0.0)
    return lx + ly


def derivative_matrix(k, direction):
    """Coefficient map of d/dxi_direction from P_k into P_{k-1} (scaled variable)."""
    ex_in = exponents(k)
    index_out = {e: i for i, e in enumerate(exponents(k - 1))} if k > 0 else {}
    out = np.zeros((n_monomials(k - 1) if k > 0 else 0, len(ex_in)))
    for j, (a, b) in enumerate(ex_in):
        p = (a, b)[direction]
        if p == 0:
            continue
        e = (a - 1, b) if direction == 0 else (a, b - 1)
        out[index_out[e], j] = p
    return out


def embed_matrix(k_from, k_to):
    """Coefficient injection P_{k_from} -> P_{k_to}."""
    out = np.zeros((n_monomials(k_to), n_monomials(k_from)))
    idx = {e: i for i, e in enumerate(exponents(k_to))}
    for j, e in enumerate(exponents(k_from)):
        out[idx[e], j] = 1.0
    return out


class ScaledMonomialBasis:
    """Scalar scaled monomials of degree ``k`` on an element."""

    def __init__(self, center, h, k):
        self.center = np.asarray(center, dtype=float)
        self.h = float(h)
        self.k = int(k)

    def __len__(self):
        return n_monomials(self.k)

    @property
    def exponents(self):
        return exponents(self.k)

    def scaled(self, points):
        return (np.atleast_2d(points) - self.center) / self.h

    def eval(self, points):
        return monomials(self.scaled(points), self.k)

    def grad(self, points):
        return monomial_gradients(self.scaled(points), self.k) / self.h

    def laplacian(self, points):
        return monomial_laplacians(self.scaled(points), self.k) / self.h**2

    def div(self, points):
        """Divergence of the vector basis ``[P_k]^2``, shape (npts, 2 * nk)."""
        g = self.grad(points)
        return np.concatenate([g[..., 0], g[..., 1]], axis=1)


def g_oplus_basis(k):
    """Coefficients of ``x_perp * m_a`` (a in P_{k-1}) in the ``[P_k]^2`` basis.

    Scaled coordinates are used, so ``x_perp = (eta, -xi)``.  The returned
    array has shape (dim P_{k-1}, 2 * dim P_k).  For ``k = 2`` the quotient
    by the degree ``k - 2`` subspace is the whole space (no lower-order
    x_perp fields exist), so this is also the quotient basis.
    """
    nk = n_monomials(k)
    idx = {e: i for i, e in enumerate(exponents(k))}
    rows = []
    for a, b in exponents(k - 1):
        row = np.zeros(2 * nk)
        row[idx[(a, b + 1)]] = 1.0          # eta * m
        row[nk + idx[(a + 1, b)]] = -1.0    # -xi * m
        rows.append(row)
    return np.array(rows)


def g_oplus_quotient_basis(k, gram=None):
    """Basis of the x_perp fields of degree k that are L2-orthogonal to degree k-2 ones.

    ``gram`` is the ``[P_k]^2`` mass matrix on the element; it is only needed
    for ``k > 2``.
    """
    full = g_oplus_basis(k)
    if k <= 2:
        return full
    low = g_oplus_basis(k - 2)
    nk, nl = n_monomials(k), n_monomials(k - 2)
    emb = np.zeros((2 * nk, 2 * nl))
    e = embed_matrix(k - 2, k)
    emb[:nk, :nl] = e
    emb[nk:, nl:] = e
    low = low @ emb.T
    # remove components along the low-order subspace, keep an independent set
    c = full @ gram @ low.T @ np.linalg.inv(low @ gram @ low.T)
    proj = full - c @ low
    u, s, _ = np.linalg.svd(proj @ gram @ proj.T)
    keep = s > 1e-12 * s[0]
    return (u[:, keep].T @ proj)


# --------------------------------------------------------------------------
# quadrature


@lru_cache(maxsize=None)
def triangle_rule(degree):
    """Collapsed Gauss rule on the reference triangle (0,0),(1,0),(0,1).

    Exact for polynomials of total degree ``degree``.  Weights sum to 1/2.
    """
    n = max(1, (degree + 2) // 2)
    xj, wj = roots_jacobi(n, 1.0, 0.0)     # weight (1 - x) on [-1, 1]
    xl, wl = roots_legendre(n)
    u = (1.0 + xj) / 2.0
    wu = wj / 4.0
    v = (1.0 + xl) / 2.0
    wv = wl / 2.0
    U, V = np.meshgrid(u, v, indexing="ij")
    W = np.outer(wu, wv)
    pts = np.column_stack([U.ravel(), (V * (1.0 - U)).ravel()])
    return pts, W.ravel()


@lru_cache(maxsize=None)
def gauss_line(n):
    """Gauss-Legendre points on [0, 1]."""
    x, w = roots_legendre(n)
    return (1.0 + x) / 2.0, w / 2.0


def polygon_area(vertices):
    v = np.asarray(vertices, dtype=float)
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def polygon_centroid(vertices):
    v = np.asarray(vertices, dtype=float)
    x, y = v[:, 0], v[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    a = 0.5 * cross.sum()
    return np.array([((x + xn) * cross).sum(), ((y + yn) * cross).sum()]) / (6.0 * a)


def polygon_diameter(vertices):
    v = np.asarray(vertices, dtype=float)
    d = v[:, None, :] - v[None, :, :]
    return float(np.sqrt((d**2).sum(-1)).max())


class PolygonQuadrature:
    """Quadrature points/weights on a polygon, exact up to ``degree``."""

    def __init__(self, points, weights, degree):
        self.points = points
        self.weights = weights
        self.degree = degree

    def integrate(self, values):
        return np.tensordot(self.weights, values, axes=(0, 0))


def polygon_quadrature(vertices, degree=6, center=None):
    """Fan triangulation from the centroid plus a triangle rule per sub-triangle."""
    if degree > 12 or degree < 0:
        raise ValueError(f"quadrature degree must be in [0, 12], got {degree}")
    v = np.asarray(vertices, dtype=float)
    area = polygon_area(v)
    if not area > 0.0:
        raise ValueError("degenerate or clockwise polygon (area <= 0)")
    c = polygon_centroid(v) if center is None else np.asarray(center, float)
    ref_pts, ref_w = triangle_rule(degree)
    a = v
    b = np.roll(v, -1, axis=0)
    e1 = a - c
    e2 = b - c
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    pts = (c[None, None, :]
           + ref_pts[None, :, 0, None] * e1[:, None, :]
           + ref_pts[None, :, 1, None] * e2[:, None, :])
    w = det[:, None] * ref_w[None, :]
    return PolygonQuadrature(pts.reshape(-1, 2), w.ravel(), degree)
