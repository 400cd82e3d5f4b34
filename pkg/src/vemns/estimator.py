"""Residual a posteriori estimator with seven per-element components."""
import csv
from dataclasses import dataclass

import numpy as np

from .element import N_P1, N_P2
from .polybasis import (
    gauss_line,
    monomial_gradients,
    monomial_laplacians,
    monomials,
    polygon_quadrature,
)

COMPONENTS = ("f", "B", "e", "S", "c1", "c2", "c3")
ESTIMATOR_QUAD_DEGREE = 10
EDGE_POINTS = 4

_LAP2 = monomial_laplacians(np.zeros((1, 2)), 2)[0]


@dataclass
class EstimatorBreakdown:
    """Per-element components (arrays of length n_elements) and sigma_E."""

    eta_f: np.ndarray
    eta_B: np.ndarray
    eta_e: np.ndarray
    eta_S: np.ndarray
    eta_c1: np.ndarray
    eta_c2: np.ndarray
    eta_c3: np.ndarray
    sigma: np.ndarray
    h: np.ndarray
    n_dof: int = 0

    def component(self, name):
        return getattr(self, "eta_" + name)

    @property
    def eta2(self):
        """eta_E^2, the sum of the seven squared components."""
        return sum(self.component(c) ** 2 for c in COMPONENTS)

    @property
    def eta(self):
        return float(np.sqrt(self.eta2.sum()))

    def global_components(self):
        return {c: float(np.sqrt((self.component(c) ** 2).sum())) for c in COMPONENTS}

    def dominant(self):
        g = self.global_components()
        return max(g, key=g.get)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["element", "h"] + ["eta_" + c for c in COMPONENTS] + ["sigma"])
            for e in range(len(self.h)):
                w.writerow([e, repr(float(self.h[e]))]
                           + [repr(float(self.component(c)[e])) for c in COMPONENTS]
                           + [repr(float(self.sigma[e]))])
            g = self.global_components()
            w.writerow(["total", ""] + [repr(g[c]) for c in COMPONENTS] + [repr(float(np.sqrt((self.sigma**2).sum())))])


def component_table(breakdowns):
    """Rows (N_dof, eta, eta_f, ..., eta_c3) for a sequence of breakdowns."""
    rows = []
    for b in breakdowns:
        g = b.global_components()
        rows.append([b.n_dof, b.eta] + [g[c] for c in COMPONENTS])
    return rows


class _GroupData:
    """Reference-element tables used by the estimator, one per kernel shape."""

    def __init__(self, kernel):
        q = polygon_quadrature(kernel.V, ESTIMATOR_QUAD_DEGREE, center=np.zeros(2))
        self.xq, self.wq = q.points, q.weights
        self.m1 = monomials(self.xq, 1)
        self.m2 = monomials(self.xq, 2)
        self.M2inv = np.linalg.inv(kernel.M2)
        samples = np.vstack([self.xq, kernel.V, kernel.edge_mid])
        self.m2s = monomials(samples, 2)


def _split2(c):
    return c[..., :N_P2], c[..., N_P2:]


def estimate(solution, problem, cache=None):
    """Estimator components for a discrete solution."""
    disc = solution.disc
    mesh = disc.mesh
    nu = problem.nu
    ne = mesh.n_elements
    out = {c: np.zeros(ne) for c in COMPONENTS}
    sigma = np.zeros(ne)
    cache = {} if cache is None else cache
    p_all = solution.p.reshape(ne, N_P1)
    u = solution.u

    # per-element coefficient tables for the edge pass
    cn_all = np.zeros((ne, 2 * N_P2))
    centers = np.zeros((ne, 2))
    hs = np.zeros(ne)

    for g in disc.groups:
        k = g.kernel
        gd = cache.get(id(k))
        if gd is None:
            gd = cache[id(k)] = _GroupData(k)
        U = u[g.dofs]                       # (G, nd)
        h = g.h
        P = p_all[g.elements]               # (G, 3)
        cn = U @ k.Pn.T                     # Nabla projection coefficients
        c0 = U @ k.P0.T                     # L2 projection coefficients
        cg = U @ k.Pg.T                     # projected gradient, scaled
        cn_all[g.elements] = cn
        centers[g.elements] = g.centers
        hs[g.elements] = h

        # fields at estimator quadrature points (physical units)
        c0x, c0y = _split2(c0)
        u0 = np.stack([c0x @ gd.m2.T, c0y @ gd.m2.T], axis=-1)          # (G, L, 2)
        G = np.empty(u0.shape[:2] + (2, 2))
        for c in range(2):
            for d in range(2):
                s = (2 * c + d) * N_P1
                G[:, :, c, d] = cg[:, s:s + N_P1] @ gd.m1.T
        G /= h[:, None, None, None]
        t = np.einsum("glcd,gld->glc", G, u0)

        cnx, cny = _split2(cn)
        lap = np.column_stack([cnx @ _LAP2, cny @ _LAP2]) / h[:, None] ** 2
        gradp = P[:, 1:3] / h[:, None]

        x = g.centers[:, None, :] + h[:, None, None] * gd.xq[None]
        if problem.force is not None:
            f = problem.force_values(x.reshape(-1, 2)).reshape(x.shape)
            fm = np.einsum("l,glc,la->gca", gd.wq, f, gd.m2) @ gd.M2inv.T   # (G, 2, 6)
            fh = np.einsum("gca,la->glc", fm, gd.m2)
        else:
            f = fh = np.zeros_like(u0)

        w = gd.wq[None, :] * h[:, None] ** 2            # physical weights
        R = fh + (nu * lap + gradp)[:, None, :] - t
        out["B"][g.elements] = h * np.sqrt(np.einsum("gl,glc->g", w, R**2))
        out["f"][g.elements] = h * np.sqrt(np.einsum("gl,glc->g", w, (fh - f) ** 2))

        tm = np.einsum("l,glc,la->gca", gd.wq, t, gd.m2) @ gd.M2inv.T
        tp = np.einsum("gca,la->glc", tm, gd.m2)
        out["c1"][g.elements] = h * np.sqrt(np.einsum("gl,glc->g", w, (tp - t) ** 2))

        sig = np.linalg.norm(U @ k.S.T, axis=1)
        sigma[g.elements] = sig
        out["S"][g.elements] = nu * sig

        us = np.stack([c0x @ gd.m2s.T, c0y @ gd.m2s.T], axis=-1)
        out["c2"][g.elements] = sig * np.sqrt((us**2).sum(-1)).max(axis=1)

        d = c0 - cn
        gdiff = np.sqrt(np.maximum(np.einsum("ga,ab,gb->g", d, k.Gst, d), 0.0))
        gnab = np.sqrt(np.maximum(np.einsum("ga,ab,gb->g", cn, k.Gst, cn), 0.0))
        out["c3"][g.elements] = (sig + gdiff) * (sig + gnab)

    out["e"] = np.sqrt(edge_jumps(mesh, cn_all, p_all, centers, hs, nu))
    return EstimatorBreakdown(
        out["f"], out["B"], out["e"], out["S"], out["c1"], out["c2"], out["c3"],
        sigma, disc.element_h.copy(), solution.n_dof,
    )


def traction(cn, p, center, h, x, nu):
    """nu * grad(Pi_nabla u) + p I at points x for arrays of elements.

    Shapes: cn (m, 12), p (m, 3), center (m, 2), h (m,), x (m, q, 2)
    -> (m, q, 2, 2).
    """
    xi = (x - center[:, None, :]) / h[:, None, None]
    flat = xi.reshape(-1, 2)
    g2 = monomial_gradients(flat, 2).reshape(xi.shape[:2] + (N_P2, 2))
    m1 = monomials(flat, 1).reshape(xi.shape[:2] + (N_P1,))
    cnx, cny = _split2(cn)
    T = np.empty(xi.shape[:2] + (2, 2))
    T[:, :, 0, :] = np.einsum("ma,mqad->mqd", cnx, g2)
    T[:, :, 1, :] = np.einsum("ma,mqad->mqd", cny, g2)
    T *= nu / h[:, None, None, None]
    pv = np.einsum("ma,mqa->mq", p, m1)
    T[:, :, 0, 0] += pv
    T[:, :, 1, 1] += pv
    return T


def edge_jumps(mesh, cn, p, centers, hs, nu):
    """Per-element sum over interior edges of h_e ||[[nu grad Pi u + p I]]||^2."""
    acc = np.zeros(mesh.n_elements)
    own = mesh.edge_elements
    interior = np.flatnonzero(own[:, 1] >= 0)
    if len(interior) == 0:
        return acc
    e1, e2 = own[interior, 0], own[interior, 1]
    a = mesh.vertices[mesh.edges[interior, 0]]
    b = mesh.vertices[mesh.edges[interior, 1]]
    t, wt = gauss_line(EDGE_POINTS)
    x = a[:, None, :] + t[None, :, None] * (b - a)[:, None, :]
    length = np.linalg.norm(b - a, axis=1)
    n1 = np.column_stack([(b - a)[:, 1], -(b - a)[:, 0]]) / length[:, None]
    T1 = traction(cn[e1], p[e1], centers[e1], hs[e1], x, nu)
    T2 = traction(cn[e2], p[e2], centers[e2], hs[e2], x, nu)
    jump = np.einsum("mqcd,md->mqc", T1 - T2, n1)
    val = length * length * np.einsum("q,mqc->m", wt, jump**2)
    np.add.at(acc, e1, val)
    np.add.at(acc, e2, val)
    return acc
