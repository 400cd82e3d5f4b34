"""Error norms, recirculation length and field export."""
import csv

import numpy as np

from .element import N_P1, N_P2
from .polybasis import monomials, polygon_quadrature

ERROR_QUAD_DEGREE = 10


def _group_points(g, degree=ERROR_QUAD_DEGREE):
    q = polygon_quadrature(g.kernel.V, degree, center=np.zeros(2))
    x = g.centers[:, None, :] + g.h[:, None, None] * q.points[None]
    w = q.weights[None, :] * g.h[:, None] ** 2
    return q.points, x, w


def velocity_error(solution, grad_u):
    """(sum_E ||grad u - Pi0_1 grad u_h||^2)^(1/2) for the exact gradient ``grad_u``."""
    total = 0.0
    for g in solution.disc.groups:
        xi, x, w = _group_points(g)
        cg = solution.u[g.dofs] @ g.kernel.Pg.T
        m1 = monomials(xi, 1)
        G = np.empty(x.shape[:2] + (2, 2))
        for c in range(2):
            for d in range(2):
                s = (2 * c + d) * N_P1
                G[:, :, c, d] = cg[:, s:s + N_P1] @ m1.T
        G /= g.h[:, None, None, None]
        ex = np.asarray(grad_u(x.reshape(-1, 2)), float).reshape(G.shape)
        total += float(np.einsum("gl,glcd->", w, (ex - G) ** 2))
    return np.sqrt(total)


def pressure_values(solution, g, xi):
    P = solution.p.reshape(-1, N_P1)[g.elements]
    return P @ monomials(xi, 1).T


def pressure_error(solution, p_exact, align=True):
    """L2 norm of p - p_h; with ``align`` both fields have their means removed."""
    parts = []
    for g in solution.disc.groups:
        xi, x, w = _group_points(g)
        ph = pressure_values(solution, g, xi)
        pe = np.asarray(p_exact(x.reshape(-1, 2)), float).reshape(ph.shape)
        parts.append((w, pe, ph))
    shift = 0.0
    if align:
        area = sum(w.sum() for w, _, _ in parts)
        shift = sum((w * (pe - ph)).sum() for w, pe, ph in parts) / area
    total = sum((w * (pe - ph - shift) ** 2).sum() for w, pe, ph in parts)
    return float(np.sqrt(total))


def recirculation_length(solution, geometry, reference="front", tol=1e-12):
    """Length of the reversed-flow region behind the obstacle along y = y_c.

    u_x is sampled at mesh vertices and edge midpoints on the centreline
    downstream of the rear face (these are dofs, so the samples are exact
    values of the quadratic edge traces).  The first negative-to-positive
    sign change is located by linear interpolation.  Returns 0 when the
    flow is not reversed next to the obstacle.

    ``reference`` picks the face the reattachment point is measured from:
    "front" (upstream face: the eddy length plus one diameter) or "rear"
    (the bare eddy length).
    """
    if reference not in ("front", "rear"):
        raise ValueError(f"reference must be 'front' or 'rear', got {reference!r}")
    mesh = solution.mesh
    yc = geometry.center[1]
    x0 = geometry.rear_face
    nv = mesh.n_vertices
    pts = np.vstack([mesh.vertices, mesh.edge_midpoints])
    ux = np.concatenate([solution.u[0:2 * nv:2],
                         solution.u[2 * nv:2 * nv + 2 * mesh.n_edges:2]])
    scale = max(geometry.cell, 1.0)
    sel = (np.abs(pts[:, 1] - yc) <= tol * scale) & (pts[:, 0] >= x0 - tol * scale)
    xs, vs = pts[sel, 0], ux[sel]
    order = np.argsort(xs)
    xs, vs = xs[order], vs[order]
    # drop the no-slip sample on the rear face itself
    keep = xs > x0 + tol * scale
    xs, vs = xs[keep], vs[keep]
    if len(xs) == 0 or vs[0] >= 0.0:
        return 0.0
    origin = geometry.front_face if reference == "front" else x0
    for i in range(len(xs) - 1):
        if vs[i] < 0.0 <= vs[i + 1]:
            xz = xs[i] - vs[i] * (xs[i + 1] - xs[i]) / (vs[i + 1] - vs[i])
            return float(xz - origin)
    return float(xs[-1] - origin)


def sample_fields(solution):
    """Pi0 u_h and p_h at element vertices and centroids.

    Returns points (m, 2), velocity (m, 2), pressure (m,), and the cell
    connectivity (list of vertex-sample index loops, one per element).
    """
    mesh = solution.mesh
    pts, vel, pre = [], [], []
    cells = [None] * mesh.n_elements
    count = 0
    for g in solution.disc.groups:
        k = g.kernel
        xi = np.vstack([k.V, np.zeros((1, 2))])
        m2 = monomials(xi, 2)
        c0 = solution.u[g.dofs] @ k.P0.T
        v = np.stack([c0[:, :N_P2] @ m2.T, c0[:, N_P2:] @ m2.T], axis=-1)
        p = pressure_values(solution, g, xi)
        x = g.centers[:, None, :] + g.h[:, None, None] * xi[None]
        for i, e in enumerate(g.elements):
            pts.append(x[i])
            vel.append(v[i])
            pre.append(p[i])
            cells[e] = list(range(count, count + k.n))
            count += k.n + 1
    return np.vstack(pts), np.vstack(vel), np.concatenate(pre), cells


def export_fields(solution, prefix, formats=("vtk", "csv")):
    """Write samples of Pi0 u_h and p_h; returns the list of written paths."""
    pts, vel, pre, cells = sample_fields(solution)
    written = []
    if "csv" in formats:
        path = f"{prefix}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "u_x", "u_y", "p"])
            for (x, y), (a, b), q in zip(pts, vel, pre):
                w.writerow([repr(float(x)), repr(float(y)), repr(float(a)), repr(float(b)), repr(float(q))])
        written.append(path)
    if "vtk" in formats:
        path = f"{prefix}.vtk"
        n = len(pts)
        size = sum(len(c) + 1 for c in cells)
        with open(path, "w") as fh:
            fh.write("# vtk DataFile Version 3.0\nvemns velocity and pressure\nASCII\nDATASET POLYDATA\n")
            fh.write(f"POINTS {n} double\n")
            for x, y in pts:
                fh.write(f"{x!r} {y!r} 0.0\n")
            fh.write(f"POLYGONS {len(cells)} {size}\n")
            for c in cells:
                fh.write(" ".join(map(str, [len(c)] + c)) + "\n")
            fh.write(f"POINT_DATA {n}\nVECTORS velocity double\n")
            for a, b in vel:
                fh.write(f"{a!r} {b!r} 0.0\n")
            fh.write("SCALARS pressure double 1\nLOOKUP_TABLE default\n")
            for q in pre:
                fh.write(f"{q!r}\n")
        written.append(path)
    return written


def read_fields_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    a = np.array([[float(v) for v in r] for r in rows]).reshape(-1, 5)
    return a[:, :2], a[:, 2:4], a[:, 4]
