import csv

import numpy as np
import pytest
import sympy as sp
from scipy.integrate import quad

from symbolic import x, y

from vemns.assembly import Discretization
from vemns.estimator import COMPONENTS, component_table, edge_jumps, estimate
from vemns.mesh import Rectangle, build_initial_mesh, refine, refine_uniform
from vemns.polybasis import exponents
from vemns.problems import ProblemSpec, manufactured_problem
from vemns.solver import DiscreteSolution, newton_solve

SMALL = Rectangle(0, -1, 2, 1, cell=0.5)


@pytest.fixture(scope="module")
def test2_solution():
    problem = manufactured_problem("test2", 10.0, SMALL)
    sol = newton_solve(problem, mesh=refine(build_initial_mesh(SMALL), [0, 9]))
    return problem, sol, estimate(sol, problem)


def test_no_force_no_oscillation(small_test1):
    problem, sol = small_test1
    b = estimate(sol, problem)
    assert np.all(b.eta_f == 0)


def test_component_identities(test2_solution):
    problem, sol, b = test2_solution
    total = sum(b.component(c) ** 2 for c in COMPONENTS)
    assert np.allclose(b.eta2, total)
    assert b.eta == pytest.approx(np.sqrt(total.sum()))
    assert np.allclose(b.eta_S, problem.nu * b.sigma)
    g = b.global_components()
    assert b.dominant() == max(g, key=g.get)
    assert b.n_dof == sol.n_dof
    assert all(np.all(b.component(c) >= 0) for c in COMPONENTS)


def test_polynomial_field_has_no_stabilization_terms():
    mesh = refine(build_initial_mesh(SMALL), [2, 4])
    disc = Discretization(mesh)

    def field(p):   # divergence free and quadratic
        X, Y = p[:, 0], p[:, 1]
        return np.column_stack([X**2 + Y, -2 * X * Y + 1])

    u = disc.interpolate(field)
    p = np.zeros(disc.n_pressure)
    sol = DiscreteSolution(u, p, disc)
    b = estimate(sol, ProblemSpec(nu=0.1, geometry=SMALL, dirichlet=field))
    scale = np.abs(u).max()
    for name in ("S", "c2", "c3"):
        assert b.component(name).max() <= 1e-12 * scale
    assert b.sigma.max() <= 1e-12 * scale
    assert b.eta_B.max() > 0


def _symbolic_traction(cn, p, center, h, nu):
    xi, eta = (x - center[0]) / h, (y - center[1]) / h
    mono = [xi**a * eta**b for a, b in exponents(2)]
    ux = sum(c * m for c, m in zip(cn[:6], mono))
    uy = sum(c * m for c, m in zip(cn[6:], mono))
    pv = p[0] + p[1] * xi + p[2] * eta
    return sp.Matrix([[nu * sp.diff(ux, x) + pv, nu * sp.diff(ux, y)],
                      [nu * sp.diff(uy, x), nu * sp.diff(uy, y) + pv]])


def test_edge_jump_against_quadrature():
    mesh = build_initial_mesh(Rectangle(0, 0, 2, 1, cell=1.0))
    assert mesh.n_elements == 2
    rng = np.random.default_rng(12)
    cn = rng.standard_normal((2, 12))
    p = rng.standard_normal((2, 3))
    centers = np.array([[0.5, 0.5], [1.5, 0.5]])
    hs = np.full(2, np.sqrt(2.0))
    nu = 0.3
    got = edge_jumps(mesh, cn, p, centers, hs, nu)

    # the shared edge is x = 1, 0 <= y <= 1, with normal (1, 0)
    T = [_symbolic_traction(cn[e], p[e], centers[e], hs[e], nu) for e in range(2)]
    jump = (T[0] - T[1])[:, 0]
    fn = sp.lambdify(y, (jump[0] ** 2 + jump[1] ** 2).subs(x, 1))
    exact = 1.0 * quad(fn, 0.0, 1.0, epsabs=1e-14, epsrel=1e-13)[0]
    assert got[0] == pytest.approx(exact, rel=1e-12)
    # the jump is shared by both sides, whatever the orientation of the edge
    assert got[1] == got[0]


def test_continuous_traction_has_no_jump():
    mesh = refine(build_initial_mesh(Rectangle(0, 0, 2, 1, cell=0.5)), [1])
    disc = Discretization(mesh)
    ne = mesh.n_elements
    # one global quadratic expressed in each element's scaled basis
    centers, hs = np.zeros((ne, 2)), disc.element_h
    for g in disc.groups:
        centers[g.elements] = g.centers
    cn, p = np.zeros((ne, 12)), np.zeros((ne, 3))
    for e in range(ne):
        cx, cy, h = centers[e, 0], centers[e, 1], hs[e]
        # u = (x^2, -2 x y), p = 1 + x written in scaled monomials
        ux = {(0, 0): cx**2, (1, 0): 2 * cx * h, (2, 0): h**2}
        uy = {(0, 0): -2 * cx * cy, (1, 0): -2 * cy * h, (0, 1): -2 * cx * h, (1, 1): -2 * h**2}
        for i, ab in enumerate(exponents(2)):
            cn[e, i] = ux.get(ab, 0.0)
            cn[e, 6 + i] = uy.get(ab, 0.0)
        p[e] = [1 + cx, h, 0.0]
    assert edge_jumps(mesh, cn, p, centers, hs, 0.7).max() <= 1e-24


def test_estimator_decreases_under_refinement():
    problem = manufactured_problem("test2", 1.0, SMALL)
    m0 = build_initial_mesh(SMALL)
    etas = []
    for mesh in (m0, refine_uniform(m0)):
        sol = newton_solve(problem, mesh=mesh)
        etas.append(estimate(sol, problem).eta)
    assert etas[1] < 0.75 * etas[0]


def test_csv_and_table(tmp_path, test2_solution):
    _, _, b = test2_solution
    path = tmp_path / "est.csv"
    b.write_csv(path)
    rows = list(csv.reader(path.open()))
    assert rows[0][:2] == ["element", "h"]
    assert len(rows) == len(b.h) + 2
    assert rows[-1][0] == "total"
    assert float(rows[1][2]) == b.eta_f[0]
    table = component_table([b, b])
    assert len(table) == 2 and len(table[0]) == 2 + len(COMPONENTS)
    assert table[0][1] == b.eta
