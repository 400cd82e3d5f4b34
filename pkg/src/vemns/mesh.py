"""Quad-tree meshes of geometric squares with hanging nodes.

Leaves of the tree are stored as ``(level, i, j)``: the square
``[x0 + i*s, x0 + (i+1)*s] x [y0 + j*s, y0 + (j+1)*s]`` with
``s = cell / 2**level``.  Vertices live on an integer lattice of spacing
``cell / 2**LATTICE_BITS`` so hanging-node bookkeeping is exact.

A hanging node is an ordinary vertex of the coarse neighbour, which then
becomes a pentagon ... octagon.  After every refinement the mesh is
1-irregular: each geometric side carries at most one hanging node.
"""
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

LATTICE_BITS = 40
MESH_FORMAT = "vemns.quadtree-mesh"
MESH_VERSION = 1

INTERIOR = "interior"


class GeometryError(ValueError):
    pass


def _is_multiple(length, cell, tol=1e-9):
    q = length / cell
    return abs(q - round(q)) <= tol * max(1.0, abs(q))


@dataclass(frozen=True)
class Rectangle:
    """Axis-aligned box tiled by squares of edge ``cell``; all-Dirichlet."""

    x0: float = 0.0
    y0: float = 0.0
    x1: float = 1.0
    y1: float = 1.0
    cell: float = 0.5
    kind: str = field(default="rectangle", init=False)

    def __post_init__(self):
        if not (self.x1 > self.x0 and self.y1 > self.y0 and self.cell > 0):
            raise GeometryError("rectangle needs x1 > x0, y1 > y0 and cell > 0")
        for name, length in (("width", self.x1 - self.x0), ("height", self.y1 - self.y0)):
            if not _is_multiple(length, self.cell):
                raise GeometryError(f"rectangle {name} {length} is not a multiple of cell {self.cell}")

    @property
    def origin(self):
        return (self.x0, self.y0)

    def base_cells(self):
        nx = round((self.x1 - self.x0) / self.cell)
        ny = round((self.y1 - self.y0) / self.cell)
        return [(i, j) for j in range(ny) for i in range(nx)]

    def area(self):
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    def boundary_label(self, point):
        return "boundary"

    def to_dict(self):
        d = asdict(self)
        d["kind"] = self.kind
        return d


@dataclass(frozen=True)
class ChannelGeometry:
    """Channel ``[cx - upstream, cx + downstream] x [-H/2, H/2]`` minus a square cylinder.

    Boundary labels: ``inflow`` (left), ``outflow`` (right), ``wall`` (top,
    bottom) and ``cylinder``.
    """

    height: float = 8.0
    diameter: float = 1.0
    center: tuple = (0.5, 0.0)
    upstream: float = 12.0
    downstream: float = 28.0
    cell: float = None
    kind: str = field(default="channel", init=False)

    def __post_init__(self):
        if self.cell is None:
            object.__setattr__(self, "cell", self.diameter / 2.0)
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        for name in ("height", "diameter", "upstream", "downstream", "cell"):
            if not getattr(self, name) > 0:
                raise GeometryError(f"channel {name} must be positive")
        cx, cy = self.center
        r = self.diameter / 2.0
        if not (self.upstream > r and self.downstream > r and abs(cy) + r < self.height / 2.0):
            raise GeometryError("cylinder must lie strictly inside the channel")
        c = self.cell
        x0, y0 = self.origin
        checks = {
            "channel length": self.upstream + self.downstream,
            "channel height": self.height,
            "cylinder diameter": self.diameter,
            "cylinder left offset": cx - r - x0,
            "cylinder bottom offset": cy - r - y0,
        }
        for name, length in checks.items():
            if not _is_multiple(length, c):
                raise GeometryError(f"{name} {length} is not a multiple of the initial square edge {c}")

    @property
    def origin(self):
        return (self.center[0] - self.upstream, -self.height / 2.0)

    @property
    def x_min(self):
        return self.center[0] - self.upstream

    @property
    def x_max(self):
        return self.center[0] + self.downstream

    @property
    def rear_face(self):
        return self.center[0] + self.diameter / 2.0

    @property
    def front_face(self):
        return self.center[0] - self.diameter / 2.0

    def base_cells(self):
        c = self.cell
        nx = round((self.upstream + self.downstream) / c)
        ny = round(self.height / c)
        x0, y0 = self.origin
        r = self.diameter / 2.0
        cx, cy = self.center
        i0 = round((cx - r - x0) / c)
        i1 = round((cx + r - x0) / c)
        j0 = round((cy - r - y0) / c)
        j1 = round((cy + r - y0) / c)
        return [(i, j) for j in range(ny) for i in range(nx)
                if not (i0 <= i < i1 and j0 <= j < j1)]

    def area(self):
        return (self.upstream + self.downstream) * self.height - self.diameter**2

    def boundary_label(self, point):
        x, y = point
        tol = 1e-9 * max(self.upstream + self.downstream, self.height)
        if abs(x - self.x_min) < tol:
            return "inflow"
        if abs(x - self.x_max) < tol:
            return "outflow"
        if abs(abs(y) - self.height / 2.0) < tol:
            return "wall"
        return "cylinder"

    def to_dict(self):
        d = asdict(self)
        d["center"] = list(self.center)
        d["kind"] = self.kind
        return d


def geometry_from_dict(d):
    d = dict(d)
    kind = d.pop("kind", "rectangle")
    if kind == "rectangle":
        return Rectangle(**d)
    if kind == "channel":
        return ChannelGeometry(**d)
    raise GeometryError(f"unknown geometry kind {kind!r}")


class QuadTreeMesh:
    """Immutable polygonal mesh produced by a quad tree.

    Attributes
    ----------
    vertices : (nv, 2) float
    elements : list of int arrays, CCW vertex loops starting at the SW corner
    levels : (ne,) int
    edges : (ned, 2) int, oriented as traversed by ``edge_elements[:, 0]``
    edge_elements : (ned, 2) int, second entry -1 on the boundary
    edge_labels : list of str, ``"interior"`` or a geometry boundary label
    element_edges : list of int arrays, edge ``i`` of an element joins
        loop vertices ``i`` and ``i + 1``
    """

    def __init__(self, geometry, leaves):
        self.geometry = geometry
        self.leaves = tuple(leaves)
        self.cell = float(geometry.cell)
        self.origin = np.array(geometry.origin, dtype=float)
        self._build()

    # ------------------------------------------------------------------
    def _corner_keys(self, leaf):
        lev, i, j = leaf
        s = 1 << (LATTICE_BITS - lev)
        x, y = i * s, j * s
        return (x, y), (x + s, y), (x + s, y + s), (x, y + s)

    def _build(self):
        corner_set = set()
        for leaf in self.leaves:
            corner_set.update(self._corner_keys(leaf))
        keys = {}
        key_list = []
        loops = []
        for leaf in self.leaves:
            cs = self._corner_keys(leaf)
            loop = []
            for a in range(4):
                p, q = cs[a], cs[(a + 1) % 4]
                for key in (p, ((p[0] + q[0]) // 2, (p[1] + q[1]) // 2)):
                    if key is p or key in corner_set:
                        if key not in keys:
                            keys[key] = len(key_list)
                            key_list.append(key)
                        loop.append(keys[key])
            loops.append(np.array(loop, dtype=np.int64))
        self.vertex_keys = key_list
        scale = self.cell / float(1 << LATTICE_BITS)
        kv = np.array(key_list, dtype=float)
        self.vertices = self.origin + kv * scale
        self.elements = loops
        self.levels = np.array([lf[0] for lf in self.leaves], dtype=np.int64)

        edge_index = {}
        edges, owners = [], []
        element_edges = []
        for e, loop in enumerate(loops):
            ids = []
            n = len(loop)
            for a in range(n):
                u, v = int(loop[a]), int(loop[(a + 1) % n])
                k = (u, v) if u < v else (v, u)
                if k in edge_index:
                    eid = edge_index[k]
                    if owners[eid][1] != -1:
                        raise RuntimeError("edge shared by more than two elements")
                    owners[eid][1] = e
                else:
                    eid = len(edges)
                    edge_index[k] = eid
                    edges.append((u, v))
                    owners.append([e, -1])
                ids.append(eid)
            element_edges.append(np.array(ids, dtype=np.int64))
        self.edges = np.array(edges, dtype=np.int64).reshape(-1, 2)
        self.edge_elements = np.array(owners, dtype=np.int64).reshape(-1, 2)
        self.element_edges = element_edges
        mids = 0.5 * (self.vertices[self.edges[:, 0]] + self.vertices[self.edges[:, 1]])
        self.edge_midpoints = mids
        self.edge_labels = [
            INTERIOR if owners[k][1] >= 0 else self.geometry.boundary_label(mids[k])
            for k in range(len(edges))
        ]
        sizes = self.cell / 2.0 ** self.levels
        self.side = sizes
        self.diameters = sizes * math.sqrt(2.0)

    # ------------------------------------------------------------------
    @property
    def n_elements(self):
        return len(self.elements)

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_edges(self):
        return len(self.edges)

    @property
    def h_max(self):
        return float(self.diameters.max())

    def element_vertices(self, e):
        return self.vertices[self.elements[e]]

    def element_areas(self):
        return self.side**2

    def boundary_edges(self, labels=None):
        idx = [k for k, lab in enumerate(self.edge_labels) if lab != INTERIOR]
        if labels is not None:
            labels = set(labels)
            idx = [k for k in idx if self.edge_labels[k] in labels]
        return np.array(idx, dtype=np.int64)

    def hanging_counts(self):
        """Number of hanging nodes on each geometric side of each element."""
        out = np.zeros((self.n_elements, 4), dtype=np.int64)
        corner_pos = {}
        for e, leaf in enumerate(self.leaves):
            corner_pos[e] = set(self._corner_keys(leaf))
        for e, loop in enumerate(self.elements):
            side = -1
            for v in loop:
                if self.vertex_keys[v] in corner_pos[e]:
                    side += 1
                else:
                    out[e, side] += 1
        return out

    def element_signature(self, e):
        """Hanging-node pattern (bitmask over S, E, N, W sides)."""
        n = len(self.elements[e])
        if n == 4:
            return 0
        leaf = self.leaves[e]
        cs = set(self._corner_keys(leaf))
        mask, side = 0, -1
        for v in self.elements[e]:
            if self.vertex_keys[v] in cs:
                side += 1
            else:
                mask |= 1 << side
        return mask

    # ------------------------------------------------------------------
    def refine(self, marked):
        return refine(self, marked)

    def to_dict(self):
        return {
            "format": MESH_FORMAT,
            "version": MESH_VERSION,
            "geometry": self.geometry.to_dict(),
            "leaves": [list(lf) for lf in self.leaves],
            "vertices": self.vertices.tolist(),
            "elements": [loop.tolist() for loop in self.elements],
            "levels": self.levels.tolist(),
            "edges": self.edges.tolist(),
            "edge_elements": self.edge_elements.tolist(),
            "edge_labels": list(self.edge_labels),
        }

    def to_json(self, path=None):
        text = json.dumps(self.to_dict())
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != MESH_FORMAT:
            raise ValueError("not a vemns quad-tree mesh document")
        if int(d.get("version", -1)) != MESH_VERSION:
            raise ValueError(f"unsupported mesh version {d.get('version')}")
        mesh = cls(geometry_from_dict(d["geometry"]), [tuple(lf) for lf in d["leaves"]])
        if "elements" in d and [lp.tolist() for lp in mesh.elements] != d["elements"]:
            raise ValueError("element table does not match the stored quad tree")
        return mesh

    @classmethod
    def from_json(cls, text_or_path):
        text = str(text_or_path)
        if not text.lstrip().startswith("{"):
            with open(text_or_path) as fh:
                text = fh.read()
        return cls.from_dict(json.loads(text))


def build_initial_mesh(geometry):
    """Level-0 squares covering the geometry."""
    return QuadTreeMesh(geometry, [(0, i, j) for i, j in geometry.base_cells()])


def _children(leaf):
    lev, i, j = leaf
    return [(lev + 1, 2 * i, 2 * j), (lev + 1, 2 * i + 1, 2 * j),
            (lev + 1, 2 * i, 2 * j + 1), (lev + 1, 2 * i + 1, 2 * j + 1)]


def _split(leaves, to_refine):
    out = []
    for k, leaf in enumerate(leaves):
        if k in to_refine:
            out.extend(_children(leaf))
        else:
            out.append(leaf)
    return out


def _closure_violations(leaves):
    """Leaves whose side has a neighbour two or more levels finer."""
    corners = set()
    for lev, i, j in leaves:
        s = 1 << (LATTICE_BITS - lev)
        x, y = i * s, j * s
        corners.update(((x, y), (x + s, y), (x + s, y + s), (x, y + s)))
    bad = set()
    for k, (lev, i, j) in enumerate(leaves):
        if lev > LATTICE_BITS - 2:
            continue
        s = 1 << (LATTICE_BITS - lev)
        q = s >> 2
        x, y = i * s, j * s
        probes = ((x + q, y), (x + 3 * q, y), (x + s, y + q), (x + s, y + 3 * q),
                  (x + q, y + s), (x + 3 * q, y + s), (x, y + q), (x, y + 3 * q))
        if any(p in corners for p in probes):
            bad.add(k)
    return bad


def refine(mesh, marked):
    """Quad-tree refinement of ``marked`` element ids plus 1-irregular closure."""
    marked = {int(m) for m in marked}
    if not marked:
        return mesh
    bad = [m for m in marked if not 0 <= m < mesh.n_elements]
    if bad:
        raise IndexError(f"element ids out of range: {sorted(bad)[:5]}")
    leaves = _split(list(mesh.leaves), marked)
    while True:
        viol = _closure_violations(leaves)
        if not viol:
            break
        leaves = _split(leaves, viol)
    return QuadTreeMesh(mesh.geometry, leaves)


def refine_uniform(mesh):
    return refine(mesh, range(mesh.n_elements))


def dorfler_mark(eta2, theta):
    """Minimal set carrying a fraction ``theta`` of the total of ``eta2``.

    Greedy on values sorted in decreasing order, ties broken by lower id.
    Returns a sorted integer array.
    """
    eta2 = np.asarray(eta2, dtype=float)
    if not 0.0 < theta < 1.0:
        raise ValueError("theta must lie in (0, 1)")
    if np.any(eta2 < 0) or not np.all(np.isfinite(eta2)):
        raise ValueError("indicator values must be finite and non-negative")
    total = math.fsum(eta2)
    if total == 0.0:
        return np.array([], dtype=np.int64)
    order = np.lexsort((np.arange(len(eta2)), -eta2))
    vals = eta2[order]
    target = theta * total
    m = min(int(np.searchsorted(np.cumsum(vals), target, side="left")), len(vals) - 1)
    # exact-sum correction of the round-off in the cumulative sum
    while m < len(vals) - 1 and math.fsum(vals[:m + 1]) < target:
        m += 1
    while m > 0 and math.fsum(vals[:m]) >= target:
        m -= 1
    chosen = order[:m + 1]
    return np.array(sorted(chosen), dtype=np.int64)


def check_invariants(mesh, tol=1e-12):
    """Raise AssertionError if a mesh invariant is violated; return a summary."""
    counts = mesh.hanging_counts()
    assert counts.max(initial=0) <= 1, "more than one hanging node on a side"
    nverts = np.array([len(lp) for lp in mesh.elements])
    assert nverts.min() >= 4 and nverts.max() <= 8
    area = sum(abs(_area(mesh.element_vertices(e))) for e in range(mesh.n_elements))
    assert abs(area - mesh.geometry.area()) <= tol * mesh.geometry.area()
    for e in range(mesh.n_elements):
        assert _area(mesh.element_vertices(e)) > 0, f"element {e} not CCW"
    # opposite traversal on interior edges
    for k, (a, b) in enumerate(mesh.edges):
        e1, e2 = mesh.edge_elements[k]
        if e2 < 0:
            continue
        for e, sign in ((e1, 1), (e2, -1)):
            loop = mesh.elements[e]
            i = int(np.where(mesh.element_edges[e] == k)[0][0])
            u, v = loop[i], loop[(i + 1) % len(loop)]
            assert (u, v) == ((a, b) if sign > 0 else (b, a)), f"edge {k} orientation"
    # star-shapedness / vertex separation (eta = sigma = 0.1)
    for e in range(mesh.n_elements):
        v = mesh.element_vertices(e)
        h = mesh.diameters[e]
        d = np.sqrt(((v[:, None] - v[None]) ** 2).sum(-1))
        d[np.diag_indices(len(v))] = np.inf
        assert d.min() >= 0.1 * h
    levels_ok = True
    for k, (e1, e2) in enumerate(mesh.edge_elements):
        if e2 >= 0 and abs(int(mesh.levels[e1]) - int(mesh.levels[e2])) > 1:
            levels_ok = False
    assert levels_ok, "edge-adjacent levels differ by more than one"
    return {"elements": mesh.n_elements, "max_hanging": int(counts.max(initial=0))}


def _area(v):
    x, y = v[:, 0], v[:, 1]
    return 0.5 * (np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))
