"""Local divergence-free virtual element (order 2) on a polygon.

All matrices are built on the *scaled* element ``xi = (x - x_E) / h_E``
(centroid at the origin, unit diameter).  Projection matrices map local dofs
to scaled-monomial coefficients and are therefore invariant under the
translation/dilation that maps an element onto its scaled copy.  Physical
local forms follow from the scale factors documented on each method.

Local dof ordering, for ``n`` vertices::

    2*i + c            value of component c at vertex i       (Dv1)
    2*n + 2*i + c      value of component c at midpoint of edge i (Dv2)
    4*n + a - 1        (h_E / |E|) * int_E div(v) m_a,  a = 1, 2   (Dv4)

Edge ``i`` joins vertex ``i`` to vertex ``i + 1``.
"""
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .polybasis import (
    derivative_matrix,
    g_oplus_quotient_basis,
    gauss_line,
    monomial_gradients,
    monomial_laplacians,
    monomials,
    n_monomials,
    polygon_area,
    polygon_centroid,
    polygon_diameter,
    polygon_quadrature,
)

K_ORDER = 2
N_P1 = n_monomials(K_ORDER - 1)   # 3
N_P2 = n_monomials(K_ORDER)       # 6
N_VEC = 2 * N_P2                  # 12
EDGE_GAUSS = 4


class SingularElementError(RuntimeError):
    pass


@dataclass(frozen=True)
class ElementDofMap:
    n_vertices: int
    n_velocity: int
    n_pressure: int
    vertex_dofs: np.ndarray      # (n, 2)
    edge_dofs: np.ndarray        # (n, 2)
    divergence_dofs: np.ndarray  # (k*(k+1)/2 - 1,)
    pressure_dofs: np.ndarray    # (k*(k+1)/2,)


def build_dof_map(n_vertices):
    n = int(n_vertices)
    k = K_ORDER
    nv = 2 * k * n + k * k - k
    vd = np.arange(2 * n).reshape(n, 2)
    ed = 2 * n + np.arange(2 * n).reshape(n, 2)
    dd = 4 * n + np.arange(N_P1 - 1)
    assert dd[-1] + 1 == nv
    return ElementDofMap(n, nv, N_P1, vd, ed, dd, np.arange(N_P1))


def _solve(G, rhs, what, tag):
    try:
        lu = sla.lu_factor(G, check_finite=True)
    except (ValueError, sla.LinAlgError) as exc:  # pragma: no cover
        raise SingularElementError(f"{what} on element {tag}: {exc}") from exc
    d = np.abs(np.diag(lu[0]))
    if d.min() <= 1e-12 * np.abs(G).max():
        raise SingularElementError(f"singular {what} on element {tag}")
    return sla.lu_solve(lu, rhs)


class ElementKernel:
    """Dof map, projections and scaled local matrices of one polygon.

    Attributes of interest (all in scaled coordinates):

    ``D``      dofs of the 12 vector monomials, (ndof, 12)
    ``Pn``     Nabla projection, dofs -> [P2]^2 coefficients, (12, ndof)
    ``P0``     L2 projection onto [P2]^2, (12, ndof)
    ``Pg``     L2 projection of the gradient onto [P1]^{2x2}, (12, ndof),
               row ``(2*c + d) * 3 + a`` holds d(v_c)/d(xi_d) against m_a
    ``Bdiv``   moments int div(v) m_b for b in P1, (3, ndof)
    ``Ddiv``   P1 coefficients of div(v), (3, ndof)
    """

    def __init__(self, vertices, quad_degree=6, tag=None):
        verts = np.asarray(vertices, dtype=float)
        if polygon_area(verts) <= 0.0:
            raise ValueError(f"element {tag}: polygon must be CCW with positive area")
        self.tag = tag
        self.center = polygon_centroid(verts)
        self.h = polygon_diameter(verts)
        self.V = (verts - self.center) / self.h
        self.n = len(verts)
        self.dofmap = build_dof_map(self.n)
        self.ndof = self.dofmap.n_velocity
        self.area_ref = polygon_area(self.V)
        self.quad = polygon_quadrature(self.V, quad_degree, center=np.zeros(2))
        self._edges()
        self._build()

    @property
    def area(self):
        return self.area_ref * self.h**2

    def physical_vertices(self):
        return self.center + self.h * self.V

    # ------------------------------------------------------------------
    def _edges(self):
        n = self.n
        V = self.V
        A = V
        B = np.roll(V, -1, axis=0)
        t, w = gauss_line(EDGE_GAUSS)
        L = np.linalg.norm(B - A, axis=1)
        self.edge_len = L
        self.edge_normal = np.column_stack([(B - A)[:, 1], -(B - A)[:, 0]]) / L[:, None]
        self.edge_mid = 0.5 * (A + B)
        pts = A[:, None, :] + t[None, :, None] * (B - A)[:, None, :]
        self.xb = pts.reshape(-1, 2)
        self.wb = (L[:, None] * w[None, :]).ravel()
        self.nb = np.repeat(self.edge_normal, len(t), axis=0)
        la = (1 - t) * (1 - 2 * t)
        lm = 4 * t * (1 - t)
        lb = t * (2 * t - 1)
        nq = len(t)
        phi = np.zeros((n, nq, 2, self.ndof))
        for i in range(n):
            j = (i + 1) % n
            for c in range(2):
                phi[i, :, c, 2 * i + c] = la
                phi[i, :, c, 2 * j + c] = lb
                phi[i, :, c, 2 * n + 2 * i + c] = lm
        self.phib = phi.reshape(n * nq, 2, self.ndof)
        # normal trace of the basis functions at edge points
        self.phib_n = np.einsum("qcj,qc->qj", self.phib, self.nb)

    def _bnd(self, g):
        """Rows int_{dE} phi_j . g_t ds for test fields g (nqb, 2, ntest)."""
        return np.einsum("q,qct,qcj->tj", self.wb, g, self.phib)

    def _build(self):
        n, nd = self.n, self.ndof
        xq, wq = self.quad.points, self.quad.weights
        A = self.area_ref
        tag = self.tag

        m1q = monomials(xq, 1)
        m2q = monomials(xq, 2)
        m3q = monomials(xq, 3)
        g2q = monomial_gradients(xq, 2)
        self.M1 = np.einsum("l,la,lb->ab", wq, m1q, m1q)
        self.M2 = np.einsum("l,la,lb->ab", wq, m2q, m2q)
        S2 = np.einsum("l,lad,lbd->ab", wq, g2q, g2q)
        self.Gst = np.zeros((N_VEC, N_VEC))
        self.Gst[:N_P2, :N_P2] = S2
        self.Gst[N_P2:, N_P2:] = S2
        self.H = np.zeros((N_VEC, N_VEC))
        self.H[:N_P2, :N_P2] = self.M2
        self.H[N_P2:, N_P2:] = self.M2

        # divergence: moment against 1 is the boundary flux, others are Dv4 dofs
        R = np.zeros((N_P1, nd))
        R[0] = self.wb @ self.phib_n
        for a in range(1, N_P1):
            R[a, 4 * n + a - 1] = A
        self.Bdiv = R
        self.Ddiv = _solve(self.M1, R, "P1 mass matrix", tag)

        # int_E v . grad p for scalar polynomials p given by values
        def grad_moment(p_int, p_bnd):
            t1 = -(p_int.T * wq) @ m1q @ self.Ddiv
            t2 = (p_bnd.T * self.wb) @ self.phib_n
            return t1 + t2

        m1b = monomials(self.xb, 1)
        m2b = monomials(self.xb, 2)
        m3b = monomials(self.xb, 3)
        # int_E v_c: use p = xi, eta
        self.Iv = grad_moment(m1q[:, 1:3], m1b[:, 1:3])

        # ---- Nabla projection
        g2b = monomial_gradients(self.xb, 2)
        lap2 = monomial_laplacians(np.zeros((1, 2)), 2)[0]
        Bn = np.zeros((N_VEC, nd))
        Gn = self.Gst.copy()
        dn = np.einsum("qad,qd->qa", g2b, self.nb)
        for c in range(2):
            g = np.zeros((len(self.xb), 2, N_P2))
            g[:, c, :] = dn
            rows = self._bnd(g) - lap2[:, None] * self.Iv[c][None, :]
            Bn[c * N_P2:(c + 1) * N_P2] = rows
            # boundary-mean condition replaces the constant rows
            Bn[c * N_P2] = self.wb @ self.phib[:, c, :]
            Gn[c * N_P2] = 0.0
            Gn[c * N_P2, c * N_P2:(c + 1) * N_P2] = self.wb @ m2b
        self.Pn = _solve(Gn, Bn, "Nabla-projection system", tag)

        # ---- dofs of the vector monomials
        D = np.zeros((nd, N_VEC))
        mv = monomials(self.V, 2)
        mm = monomials(self.edge_mid, 2)
        for c in range(2):
            D[c:2 * n:2, c * N_P2:(c + 1) * N_P2] = mv
            D[2 * n + c:4 * n:2, c * N_P2:(c + 1) * N_P2] = mm
        divq = np.concatenate([g2q[:, :, 0], g2q[:, :, 1]], axis=1)   # (l, 12)
        for a in range(1, N_P1):
            D[4 * n + a - 1] = (wq * m1q[:, a]) @ divq / A
        self.D = D

        # ---- L2 projection through grad P3 (+) x_perp P1
        dx3 = derivative_matrix(3, 0)
        dy3 = derivative_matrix(3, 1)
        ngrad = n_monomials(3) - 1
        Tm = np.zeros((N_VEC, N_VEC))
        Tm[:ngrad, :N_P2] = dx3[:, 1:].T
        Tm[:ngrad, N_P2:] = dy3[:, 1:].T
        perp = g_oplus_quotient_basis(K_ORDER, self.H)
        Tm[ngrad:] = perp
        mom_z = np.zeros((N_VEC, nd))
        mom_z[:ngrad] = grad_moment(m3q[:, 1:], m3b[:, 1:])
        mom_z[ngrad:] = perp @ self.H @ self.Pn
        mom_q = _solve(Tm, mom_z, "grad/x_perp change of basis", tag)
        self.P0 = _solve(self.H, mom_q, "[P2]^2 mass matrix", tag)

        # ---- L2 projection of the gradient onto P1 tensors
        Pg = np.zeros((4 * N_P1, nd))
        for c in range(2):
            for d in range(2):
                g = np.zeros((len(self.xb), 2, N_P1))
                g[:, c, :] = m1b * self.nb[:, d:d + 1]
                rows = self._bnd(g)
                rows[d + 1] -= self.Iv[c]
                s = (2 * c + d) * N_P1
                Pg[s:s + N_P1] = _solve(self.M1, rows, "P1 mass matrix", tag)
        self.Pg = Pg

        # ---- local forms (scaled)
        self.Kc = self.Pn.T @ self.Gst @ self.Pn
        self.S = np.eye(nd) - self.D @ self.Pn
        self.Ks = self.S.T @ self.S
        # projected fields at quadrature points
        self.W0 = np.stack([m2q @ self.P0[:N_P2], m2q @ self.P0[N_P2:]], axis=1)  # (l, 2, nd)
        Gv = np.empty((len(wq), 2, 2, nd))
        for c in range(2):
            for d in range(2):
                s = (2 * c + d) * N_P1
                Gv[:, c, d] = m1q @ Pg[s:s + N_P1]
        self.Gv = Gv
        # c_ref(phi_k; phi_j, phi_i) = int (G phi_j)(W phi_k) . W phi_i
        self.Tc = np.einsum("l,lci,lcdj,ldk->ijk", wq, self.W0, Gv, self.W0, optimize=True)

    # ------------------------------------------------------------------
    # physical local forms

    def local_a(self, nu):
        """nu * (consistency + dofi-dofi stabilization); scale invariant."""
        return nu * (self.Kc + self.Ks)

    def local_b(self):
        """(3, ndof) matrix of int_E div(v) m_b dx; scales with h_E."""
        return self.h * self.Bdiv

    def convective_tensor(self, skew=False):
        """T[i, j, k] = c_h(phi_k; phi_j, phi_i) (physical, i.e. times h_E)."""
        T = self.h * self.Tc
        if skew:
            T = 0.5 * (T - T.transpose(1, 0, 2))
        return T

    def local_c(self, w, skew=False):
        """Matrix of u -> c_h(w; u, .)."""
        return self.convective_tensor(skew) @ w

    def local_c_adjoint(self, u, skew=False):
        """Matrix of w -> c_h(w; u, .), the second Newton term."""
        return np.einsum("ijk,j->ik", self.convective_tensor(skew), u)

    def local_load(self, f):
        """int_E f . P0 phi_j dx with ``f`` a callable (npts, 2) -> (npts, 2)."""
        x = self.center + self.h * self.quad.points
        fv = np.asarray(f(x), dtype=float).reshape(-1, 2)
        return self.h**2 * np.einsum("l,lc,lcj->j", self.quad.weights, fv, self.W0)

    def sigma(self, u):
        return float(np.linalg.norm(self.S @ u))

    # ------------------------------------------------------------------
    # helpers for evaluating projected fields

    def interpolate(self, fn):
        """Dofs of a vector field ``fn`` (npts, 2) -> (npts, 2).

        Point values are exact; divergence moments are computed by quadrature
        of the finite-difference free divergence supplied via ``fn.div`` if
        present, otherwise through the boundary flux / moment identity which
        is exact when ``fn`` is a polynomial of degree <= 2.
        """
        n = self.n
        pv = self.center + self.h * self.V
        pm = self.center + self.h * self.edge_mid
        out = np.zeros(self.ndof)
        out[:2 * n] = np.asarray(fn(pv), float).reshape(-1)
        out[2 * n:4 * n] = np.asarray(fn(pm), float).reshape(-1)
        div = getattr(fn, "div", None)
        xq = self.center + self.h * self.quad.points
        m1 = monomials(self.quad.points, 1)
        if div is not None:
            dv = np.asarray(div(xq), float)
            # (h/|E|) int div v m_a dx = (1/A_ref) sum w * h * div * m_a
            out[4 * n:] = self.h * (self.quad.weights * dv) @ m1[:, 1:] / self.area_ref
        else:
            raise ValueError("interpolation needs the divergence of the field (fn.div)")
        return out

    def interpolate_poly(self, coeffs):
        """Dofs of a [P2]^2 field given by scaled-monomial coefficients (12,)."""
        return self.D @ np.asarray(coeffs, float)


def sigma_E(kernel, u):
    return kernel.sigma(u)


def compute_projections(vertices, quad_degree=6, tag=None):
    return ElementKernel(vertices, quad_degree=quad_degree, tag=tag)
