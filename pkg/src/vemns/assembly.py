"""Global saddle-point assembly on a quad-tree mesh.

Global velocity numbering (``Nv`` vertices, ``Ne`` edges, ``E`` elements)::

    2*v + c                    vertex values
    2*Nv + 2*e + c             edge-midpoint values
    2*Nv + 2*Ne + 2*E + a      scaled divergence moments of element E (a = 0, 1)

Pressure coefficients of element E live at ``3*E + b`` (scaled P1 monomials).
"""
from dataclasses import dataclass

import numpy as np
import pymetis
import scipy.sparse as sp

from .element import N_P1, ElementKernel
from .polybasis import monomials, polygon_centroid, polygon_diameter


class DofTableError(ValueError):
    pass


def shape_key(scaled_vertices, digits=10):
    """Hashable key of a normalized polygon (translation/dilation removed)."""
    return tuple(np.round(np.asarray(scaled_vertices), digits).ravel().tolist())


class KernelCache:
    """Reference element kernels keyed by normalized geometry.

    Quad-tree elements come in a handful of shapes (a square with 0-4
    hanging nodes); each is built once and reused across meshes.
    """

    def __init__(self, quad_degree=6):
        self.quad_degree = quad_degree
        self._store = {}

    def __len__(self):
        return len(self._store)

    def get(self, vertices, tag=None):
        v = np.asarray(vertices, float)
        c = polygon_centroid(v)
        h = polygon_diameter(v)
        key = shape_key((v - c) / h)
        k = self._store.get(key)
        if k is None:
            k = ElementKernel(v, quad_degree=self.quad_degree, tag=tag)
            self._store[key] = k
        return key, k, c, h


@dataclass
class ElementGroup:
    """Elements sharing one reference kernel."""

    kernel: ElementKernel
    elements: np.ndarray   # (g,)
    dofs: np.ndarray       # (g, nd) global velocity dofs
    h: np.ndarray          # (g,)
    centers: np.ndarray    # (g, 2)


class _Scatter:
    """Precomputed COO -> CSR reduction for a fixed sparsity pattern."""

    def __init__(self, rows, cols, shape):
        lin = rows.astype(np.int64) * shape[1] + cols
        uniq, self.inverse = np.unique(lin, return_inverse=True)
        self.rows = uniq // shape[1]
        self.cols = uniq % shape[1]
        self.shape = shape
        self.n = len(uniq)

    def matrix(self, data):
        vals = np.bincount(self.inverse, weights=np.ravel(data), minlength=self.n)
        return sp.csr_matrix((vals, (self.rows, self.cols)), shape=self.shape)


class Discretization:
    """Dof tables, element groups and constant (Stokes) blocks on one mesh."""

    def __init__(self, mesh, cache=None):
        self.mesh = mesh
        self.cache = cache if cache is not None else KernelCache()
        nv, ned, ne = mesh.n_vertices, mesh.n_edges, mesh.n_elements
        self.n_vertices, self.n_edges, self.n_elements = nv, ned, ne
        self.edge_offset = 2 * nv
        self.moment_offset = 2 * nv + 2 * ned
        self.n_velocity = 2 * (nv + ned + ne)
        self.n_pressure = N_P1 * ne
        self._orders = {}
        self._group()
        self._stokes_blocks()

    # ------------------------------------------------------------------
    def element_dofs(self, e):
        loop = np.asarray(self.mesh.elements[e])
        eds = np.asarray(self.mesh.element_edges[e])
        if len(loop) != len(eds):
            raise DofTableError(f"element {e}: {len(loop)} vertices but {len(eds)} edges")
        d = np.empty(4 * len(loop) + 2, dtype=np.int64)
        d[0:2 * len(loop):2] = 2 * loop
        d[1:2 * len(loop):2] = 2 * loop + 1
        d[2 * len(loop):4 * len(loop):2] = self.edge_offset + 2 * eds
        d[2 * len(loop) + 1:4 * len(loop):2] = self.edge_offset + 2 * eds + 1
        d[-2:] = self.moment_offset + 2 * e + np.arange(2)
        return d

    def _group(self):
        buckets = {}
        for e in range(self.n_elements):
            v = self.mesh.element_vertices(e)
            key, kern, c, h = self.cache.get(v, tag=e)
            b = buckets.setdefault(key, (kern, [], [], [], []))
            b[1].append(e)
            b[2].append(self.element_dofs(e))
            b[3].append(h)
            b[4].append(c)
        self.groups = [
            ElementGroup(k, np.array(es), np.array(ds), np.array(hs), np.array(cs))
            for k, es, ds, hs, cs in buckets.values()
        ]
        self.element_h = np.empty(self.n_elements)
        self.element_area = np.empty(self.n_elements)
        for g in self.groups:
            self.element_h[g.elements] = g.h
            self.element_area[g.elements] = g.kernel.area_ref * g.h**2

        rows, cols = [], []
        for g in self.groups:
            nd = g.dofs.shape[1]
            rows.append(np.repeat(g.dofs, nd, axis=1).ravel())
            cols.append(np.tile(g.dofs, (1, nd)).ravel())
        n = self.n_velocity
        self._vv = _Scatter(np.concatenate(rows), np.concatenate(cols), (n, n))

    def _stokes_blocks(self):
        stiff, brow, bcol, bval = [], [], [], []
        for g in self.groups:
            k = g.kernel
            stiff.append(np.broadcast_to(k.Kc + k.Ks, (len(g.elements),) + k.Kc.shape))
            pr = N_P1 * g.elements[:, None] + np.arange(N_P1)[None, :]
            brow.append(np.repeat(pr[:, :, None], k.ndof, axis=2).ravel())
            bcol.append(np.repeat(g.dofs[:, None, :], N_P1, axis=1).ravel())
            bval.append((g.h[:, None, None] * k.Bdiv[None]).ravel())
        self.K = self._vv.matrix(np.concatenate([s.ravel() for s in stiff]))
        self.B = sp.csr_matrix(
            (np.concatenate(bval), (np.concatenate(brow), np.concatenate(bcol))),
            shape=(self.n_pressure, self.n_velocity),
        )
        # mean-value row: int p_h = sum |E| * (constant coefficient)
        self.mean_row = np.zeros(self.n_pressure)
        self.mean_row[0::N_P1] = self.element_area

    # ------------------------------------------------------------------
    def local_values(self, u, group):
        return np.asarray(u)[group.dofs]

    def convection_matrix(self, w, mode="picard", skew=False, u=None):
        """Sparse matrix of u -> c_h(w; u, .) ('picard') or of
        w -> c_h(w; u, .) ('adjoint', needs ``u``)."""
        data = []
        for g in self.groups:
            T = g.kernel.Tc
            if skew:
                T = 0.5 * (T - T.transpose(1, 0, 2))
            nd = T.shape[0]
            if mode == "picard":
                W = self.local_values(w, g)                          # (g, nd)
                loc = (T.reshape(nd * nd, nd) @ W.T).T.reshape(-1, nd, nd)
            else:
                U = self.local_values(u, g)
                loc = np.einsum("ijk,gj->gik", T, U, optimize=True)
            data.append((g.h[:, None, None] * loc).ravel())
        return self._vv.matrix(np.concatenate(data))

    def load_vector(self, force):
        """Global (f_h, v) for a callable force, zero if ``force`` is None."""
        F = np.zeros(self.n_velocity)
        if force is None:
            return F
        for g in self.groups:
            k = g.kernel
            x = g.centers[:, None, :] + g.h[:, None, None] * k.quad.points[None]
            fv = np.asarray(force(x.reshape(-1, 2)), float).reshape(len(g.elements), -1, 2)
            loc = np.einsum("l,glc,lcj->gj", k.quad.weights, fv, k.W0)
            np.add.at(F, g.dofs, g.h[:, None] ** 2 * loc)
        return F

    # ------------------------------------------------------------------
    def interpolate(self, fn, div=None):
        """Global dofs of a vector field: point values plus divergence moments.

        ``div`` (callable) gives the divergence for the moment dofs; if it is
        omitted the field is taken to be divergence free.
        """
        m = self.mesh
        u = np.zeros(self.n_velocity)
        u[:self.edge_offset] = np.asarray(fn(m.vertices), float).ravel()
        u[self.edge_offset:self.moment_offset] = np.asarray(fn(m.edge_midpoints), float).ravel()
        if div is not None:
            for g in self.groups:
                k = g.kernel
                x = g.centers[:, None, :] + g.h[:, None, None] * k.quad.points[None]
                dv = np.asarray(div(x.reshape(-1, 2)), float).reshape(len(g.elements), -1)
                m1 = monomials(k.quad.points, 1)[:, 1:]
                mom = g.h[:, None] * ((dv * k.quad.weights) @ m1) / k.area_ref
                u[g.dofs[:, -2:]] = mom
        return u

    def boundary_dofs(self, labels):
        """Velocity dofs on boundary edges with the given labels and their points."""
        m = self.mesh
        verts, edges = set(), []
        for k in m.boundary_edges(labels):
            edges.append(k)
            verts.update(int(x) for x in m.edges[k])
        verts = np.array(sorted(verts), dtype=np.int64)
        edges = np.array(sorted(edges), dtype=np.int64)
        return verts, edges

    def divergence_l2(self, u):
        """||div u_h||_{0,Omega}, evaluated exactly from the P1 divergence."""
        total = 0.0
        for g in self.groups:
            k = g.kernel
            d = self.local_values(u, g) @ k.Ddiv.T           # (g, 3) scaled coefficients
            total += float(np.einsum("ga,ab,gb->", d, k.M1, d))
        return np.sqrt(total)


@dataclass
class GlobalSystem:
    """Saddle-point system after Dirichlet elimination.

    Unknown layout: ``[u_free, p_kept, (lambda)]``.  In condensed form the
    element divergence moments are fixed to zero (the divergence rows force
    this) and only the constant pressure mode of each element is kept; the
    two remaining modes are recovered from the moment rows in :meth:`expand`.
    ``order`` is a fill-reducing symmetric permutation of the unknowns.
    """

    matrix: sp.csc_matrix
    rhs: np.ndarray
    free: np.ndarray
    fixed: np.ndarray
    fixed_values: np.ndarray
    n_velocity: int
    n_pressure: int
    mean_zero: bool
    pressure_kept: np.ndarray
    order: np.ndarray = None
    recover_rows: object = None      # sparse rows of A at the moment dofs
    recover_rhs: np.ndarray = None
    recover_scale: np.ndarray = None
    recover_dofs: np.ndarray = None

    @property
    def size(self):
        return self.matrix.shape[0]

    def expand(self, x):
        """Split a solution of the reduced system into full (u, p)."""
        nf = len(self.free)
        u = np.empty(self.n_velocity)
        u[self.free] = x[:nf]
        u[self.fixed] = self.fixed_values
        p = np.zeros(self.n_pressure)
        p[self.pressure_kept] = x[nf:nf + len(self.pressure_kept)]
        if self.recover_rows is not None:
            # moment row a of element E: (A u)_m + h |E_ref| p_{E,a} = F_m
            vals = (self.recover_rhs - self.recover_rows @ u) / self.recover_scale
            p[self.recover_dofs] = vals
        return u, p


def dirichlet_data(disc, problem, flux_correction=True):
    """Fixed dofs and values on the Dirichlet boundary.

    When the whole boundary is Dirichlet the interpolated data may carry a
    small net flux, which would be incompatible with an exactly divergence
    free velocity.  It is removed by shifting the normal component of the
    edge-midpoint values uniformly (the midpoint value carries 2/3 of the
    edge flux for the quadratic trace).
    """
    mesh = disc.mesh
    verts, edges = disc.boundary_dofs(problem.dirichlet_labels)
    gv = np.asarray(problem.dirichlet(mesh.vertices[verts]), float).reshape(-1, 2) if len(verts) else np.zeros((0, 2))
    ge = np.asarray(problem.dirichlet(mesh.edge_midpoints[edges]), float).reshape(-1, 2) if len(edges) else np.zeros((0, 2))
    if not (np.all(np.isfinite(gv)) and np.all(np.isfinite(ge))):
        raise ValueError("Dirichlet data is not finite at some boundary dof")

    if flux_correction and not problem.has_neumann and len(edges):
        a = mesh.vertices[mesh.edges[edges, 0]]
        b = mesh.vertices[mesh.edges[edges, 1]]
        t = b - a
        length = np.linalg.norm(t, axis=1)
        normal = np.column_stack([t[:, 1], -t[:, 0]]) / length[:, None]
        # boundary edges are oriented by their only (interior-side) element: CCW
        vid = {int(v): i for i, v in enumerate(verts)}
        ga = gv[[vid[int(v)] for v in mesh.edges[edges, 0]]]
        gb = gv[[vid[int(v)] for v in mesh.edges[edges, 1]]]
        flux = np.sum(length * np.einsum("ec,ec->e", (ga + gb) / 6.0 + 2.0 * ge / 3.0, normal))
        delta = -flux / (2.0 / 3.0 * length.sum())
        ge = ge + delta * normal

    fixed = np.concatenate([
        (2 * verts[:, None] + np.arange(2)).ravel(),
        (disc.edge_offset + 2 * edges[:, None] + np.arange(2)).ravel(),
    ]).astype(np.int64)
    values = np.concatenate([gv.ravel(), ge.ravel()])
    order = np.argsort(fixed)
    return fixed[order], values[order]


def pressure_gauge(problem, mode=None):
    """Resolve the pressure gauge: 'mean-zero' or 'none'."""
    if mode is None:
        return "none" if problem.has_neumann else "mean-zero"
    if mode not in ("mean-zero", "none"):
        raise ValueError(f"unknown pressure gauge {mode!r}")
    if mode == "mean-zero" and problem.has_neumann:
        raise ValueError("mean-zero pressure requested but a Neumann boundary fixes the gauge")
    return mode


def _fill_order(disc, free, kept, Bk, n_extra):
    """Nested-dissection order of the velocity block, each pressure unknown
    placed right after the last velocity dof it couples to (so every pivot
    is nonzero when it is reached), multipliers last."""
    key = (free.tobytes(), kept.tobytes())
    cached = disc._orders.get(key)
    if cached is not None:
        return cached
    nf = len(free)
    pattern = disc.K[free][:, free].tocsr()
    pattern.setdiag(0)
    pattern.eliminate_zeros()
    pos = np.empty(nf, dtype=np.int64)
    if nf:
        pos[nested_dissection(pattern)] = np.arange(nf)
    Bk = Bk.tocsr()
    pkey = np.full(Bk.shape[0], float(nf))
    for r in range(Bk.shape[0]):
        cols = Bk.indices[Bk.indptr[r]:Bk.indptr[r + 1]]
        if len(cols):
            pkey[r] = pos[cols].max() + 0.5
    keys = np.concatenate([pos.astype(float), pkey, np.full(n_extra, np.inf)])
    order = np.argsort(keys, kind="stable")
    disc._orders[key] = order
    return order


def nested_dissection(adjacency):
    """METIS fill-reducing ordering of a symmetric sparsity pattern."""
    adj = sp.csr_matrix(adjacency)
    adj = (adj + adj.T).tocsr()
    adj.setdiag(0)
    adj.eliminate_zeros()
    perm, _ = pymetis.nested_dissection(pymetis.CSRAdjacency(adj.indptr, adj.indices))
    return np.asarray(perm, dtype=np.int64)


def assemble(disc, problem, w=None, skew=False, gauge=None, dirichlet=None, load=None,
             condense=True):
    """Stokes (``w`` is None) or Newton system linearized at ``w``.

    Newton: a(u) + c(w; u) + c(u; w) + b(., p) = f + c(w; w), b(u, .) = 0.
    """
    n_u, n_p = disc.n_velocity, disc.n_pressure
    A = problem.nu * disc.K
    F = disc.load_vector(problem.force) if load is None else load.copy()
    if w is not None:
        C1 = disc.convection_matrix(w, "picard", skew)
        C2 = disc.convection_matrix(None, "adjoint", skew, u=w)
        A = A + C1 + C2
        F = F + C1 @ w
    fixed, values = dirichlet if dirichlet is not None else dirichlet_data(disc, problem)
    A = A.tocsr()

    if condense:
        moments = np.arange(disc.moment_offset, n_u)
        fixed_all = np.concatenate([fixed, moments])
        values_all = np.concatenate([values, np.zeros(len(moments))])
        kept = np.arange(0, n_p, N_P1)
        lost = np.setdiff1d(np.arange(n_p), kept)
    else:
        fixed_all, values_all = fixed, values
        kept = np.arange(n_p)
        lost = np.zeros(0, dtype=np.int64)
    srt = np.argsort(fixed_all)
    fixed_all, values_all = fixed_all[srt], values_all[srt]
    free = np.setdiff1d(np.arange(n_u), fixed_all, assume_unique=True)

    Aff = A[free][:, free]
    lift = A[:, fixed_all] @ values_all
    r_u = F[free] - lift[free]
    Bk = disc.B[kept]
    r_p = -(Bk[:, fixed_all] @ values_all)
    Bf = Bk[:, free]

    mode = pressure_gauge(problem, gauge)
    blocks = [[Aff, Bf.T], [Bf, None]]
    rhs = [r_u, r_p]
    n_extra = 0
    if mode == "mean-zero":
        c = sp.csr_matrix(disc.mean_row[kept][None, :])
        blocks = [[Aff, Bf.T, None], [Bf, None, c.T], [None, c, None]]
        rhs.append(np.zeros(1))
        n_extra = 1
    M = sp.bmat(blocks, format="csc")
    order = _fill_order(disc, free, kept, Bf, n_extra)

    system = GlobalSystem(M, np.concatenate(rhs), free, fixed_all, values_all, n_u, n_p,
                          mode == "mean-zero", kept, order)
    if len(lost):
        # pressure mode a of element E pairs with moment dof a of E
        mdofs = disc.moment_offset + (lost // N_P1) * 2 + (lost % N_P1) - 1
        system.recover_rows = A[mdofs]
        system.recover_rhs = F[mdofs]
        system.recover_scale = np.asarray(disc.B[lost, mdofs]).ravel()
        system.recover_dofs = lost
    return system


def nonlinear_residual(disc, problem, u, p, skew=False, load=None):
    """Residual of the discrete problem at (u, p), restricted to free rows."""
    fixed, _ = dirichlet_data(disc, problem)
    free = np.setdiff1d(np.arange(disc.n_velocity), fixed, assume_unique=True)
    F = disc.load_vector(problem.force) if load is None else load
    C = disc.convection_matrix(u, "picard", skew)
    r_u = problem.nu * (disc.K @ u) + C @ u + disc.B.T @ p - F
    r_p = disc.B @ u
    return np.concatenate([r_u[free], r_p])
