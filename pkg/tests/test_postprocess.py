import numpy as np
import pytest

from oracle import OracleElement

from vemns.assembly import Discretization
from vemns.mesh import ChannelGeometry, Rectangle, build_initial_mesh, refine
from vemns.postprocess import (
    export_fields,
    pressure_error,
    read_fields_csv,
    recirculation_length,
    sample_fields,
    velocity_error,
)
from vemns.problems import channel_problem
from vemns.solver import DiscreteSolution, solve_stokes

SQUARE = Rectangle(0, 0, 1, 1, cell=0.5)
SMALL_CHANNEL = ChannelGeometry(height=4, upstream=2, downstream=4)


def solution_of(mesh, field, pressure=None):
    disc = Discretization(mesh)
    u = disc.interpolate(field)
    p = np.zeros(disc.n_pressure) if pressure is None else pressure(disc)
    return DiscreteSolution(u, p, disc)


def test_linear_field_has_zero_velocity_error():
    A = np.array([[0.3, -1.2], [0.7, -0.3]])     # trace free

    def field(x):
        return x @ A.T

    sol = solution_of(refine(build_initial_mesh(SQUARE), [1]), field)
    assert velocity_error(sol, lambda x: np.broadcast_to(A, (len(x), 2, 2))) <= 1e-13


def test_velocity_error_matches_oracle_projection(rng):
    mesh = refine(build_initial_mesh(SQUARE), [0])
    disc = Discretization(mesh)
    u = rng.standard_normal(disc.n_velocity)
    sol = DiscreteSolution(u, np.zeros(disc.n_pressure), disc)
    total = 0.0
    for e in range(mesh.n_elements):
        o = OracleElement(mesh.element_vertices(e))
        G = o.grad_proj() @ u[disc.element_dofs(e)]     # (q, 2, 2) at oracle points
        total += np.einsum("q,qcd->", o.wq, G**2)
    zero = velocity_error(sol, lambda x: np.zeros((len(x), 2, 2)))
    assert zero == pytest.approx(np.sqrt(total), rel=1e-12)


def test_pressure_error_on_exact_p1_data():
    mesh = build_initial_mesh(SQUARE)

    def pressure(disc):
        p = np.zeros(disc.n_pressure)
        for g in disc.groups:
            c, h = g.centers, g.h
            # p = 2 - x + 3 y in each element's scaled basis
            p[3 * g.elements] = 2 - c[:, 0] + 3 * c[:, 1]
            p[3 * g.elements + 1] = -h
            p[3 * g.elements + 2] = 3 * h
        return p

    sol = solution_of(mesh, lambda x: np.zeros_like(x), pressure)

    def exact(x):
        return 2 - x[:, 0] + 3 * x[:, 1]

    assert pressure_error(sol, exact, align=False) <= 1e-13
    shifted = pressure_error(sol, lambda x: exact(x) + 5.0)
    assert shifted <= 1e-13
    assert pressure_error(sol, lambda x: exact(x) + 5.0, align=False) == pytest.approx(5.0)


def test_recirculation_of_linear_profile():
    g = SMALL_CHANNEL
    mesh = build_initial_mesh(g)
    xr = g.rear_face + 1.3

    def field(x):
        return np.column_stack([x[:, 0] - xr, np.zeros(len(x))])

    sol = solution_of(mesh, field)
    front = recirculation_length(sol, g)
    rear = recirculation_length(sol, g, reference="rear")
    assert rear == pytest.approx(1.3, abs=1e-12)
    assert front == pytest.approx(rear + g.diameter, abs=1e-12)


def test_recirculation_zero_without_reversal():
    g = SMALL_CHANNEL
    sol = solution_of(build_initial_mesh(g), lambda x: np.column_stack([1 + 0 * x[:, 0], 0 * x[:, 0]]))
    assert recirculation_length(sol, g) == 0.0
    with pytest.raises(ValueError):
        recirculation_length(sol, g, reference="middle")


def test_stokes_flow_has_no_eddy():
    problem = channel_problem(1e-3, SMALL_CHANNEL)
    sol = solve_stokes(problem, mesh=build_initial_mesh(SMALL_CHANNEL))
    assert recirculation_length(sol, SMALL_CHANNEL) == 0.0


def test_csv_round_trip(tmp_path, rng):
    mesh = refine(build_initial_mesh(SQUARE), [2])
    disc = Discretization(mesh)
    sol = DiscreteSolution(rng.standard_normal(disc.n_velocity), rng.standard_normal(disc.n_pressure), disc)
    paths = export_fields(sol, str(tmp_path / "fields"))
    pts, vel, pre, cells = sample_fields(sol)
    x, v, p = read_fields_csv(paths[0] if paths[0].endswith(".csv") else paths[1])
    assert np.array_equal(x, pts) and np.array_equal(v, vel) and np.array_equal(p, pre)


def test_vtk_layout(tmp_path):
    mesh = refine(build_initial_mesh(SQUARE), [0])
    sol = solution_of(mesh, lambda x: np.zeros_like(x))
    (path,) = export_fields(sol, str(tmp_path / "zero"), formats=("vtk",))
    text = open(path).read().splitlines()
    poly = next(line for line in text if line.startswith("POLYGONS"))
    assert int(poly.split()[1]) == mesh.n_elements
    _, vel, pre, cells = sample_fields(sol)
    assert np.all(vel == 0) and np.all(pre == 0)
    assert sorted(len(c) for c in cells) == sorted(len(loop) for loop in mesh.elements)
