import numpy as np
import pytest

from vemns.assembly import (
    Discretization,
    KernelCache,
    assemble,
    dirichlet_data,
    nonlinear_residual,
    pressure_gauge,
)
from vemns.mesh import ChannelGeometry, Rectangle, build_initial_mesh, refine
from vemns.problems import ProblemSpec, channel_problem, manufactured_problem
from vemns.solver import _solve_linear

UNIT = Rectangle(0, 0, 1, 1, cell=0.5)


def stokes_problem(**kw):
    return ProblemSpec(nu=1.0, geometry=UNIT, **kw)


def test_kernel_cache_shares_shapes():
    cache = KernelCache()
    mesh = refine(build_initial_mesh(Rectangle(0, 0, 2, 2, cell=0.5)), [0, 5])
    disc = Discretization(mesh, cache)
    # squares at two levels plus hanging-node variants, far fewer than elements
    assert len(cache) == len(disc.groups) < mesh.n_elements
    assert sum(len(g.elements) for g in disc.groups) == mesh.n_elements


def test_full_system_size_on_2x2():
    disc = Discretization(build_initial_mesh(UNIT))
    assert disc.n_velocity == 2 * (9 + 12 + 4) == 50
    sysm = assemble(disc, stokes_problem(), condense=False)
    # one interior vertex + 4 interior edges + 4 elements' moments = 18
    # velocity unknowns, 12 pressures, one multiplier
    assert sysm.size == 18 + 12 + 1
    assert sysm.mean_zero


def test_stokes_velocity_block_symmetric():
    disc = Discretization(refine(build_initial_mesh(UNIT), [1]))
    K = disc.K
    assert abs(K - K.T).max() <= 1e-13 * abs(K).max()


def test_skew_convection_vanishes_on_diagonal(rng):
    disc = Discretization(refine(build_initial_mesh(UNIT), [2]))
    w, v = rng.standard_normal((2, disc.n_velocity))
    C = disc.convection_matrix(w, skew=True)
    assert abs(v @ C @ v) <= 1e-12 * np.abs(C @ v).sum() * np.abs(v).max()


def test_convection_modes_agree(rng):
    disc = Discretization(refine(build_initial_mesh(UNIT), [0]))
    w, u = rng.standard_normal((2, disc.n_velocity))
    a = disc.convection_matrix(w, "picard") @ u
    b = disc.convection_matrix(None, "adjoint", u=u) @ w
    assert np.allclose(a, b, atol=1e-12 * np.abs(a).max())


def test_zero_boundary_data_gives_zero_lift():
    disc = Discretization(build_initial_mesh(UNIT))
    fixed, values = dirichlet_data(disc, stokes_problem())
    assert np.all(values == 0)
    sysm = assemble(disc, stokes_problem())
    assert np.all(sysm.rhs == 0)


def test_boundary_dofs_take_exact_values():
    problem = manufactured_problem("test1", 1.0, Rectangle(0, 0, 1, 1, cell=0.25))
    disc = Discretization(build_initial_mesh(problem.geometry))
    fixed, values = dirichlet_data(disc, problem)
    exact = disc.interpolate(problem.exact.u)
    # Test 1 data is divergence free, so the flux correction is negligible
    assert np.allclose(values, exact[fixed], atol=1e-13)
    u, _ = _solve_linear(assemble(disc, problem), disc.mesh)
    assert np.array_equal(u[fixed], values)


def test_flux_correction_removes_net_flux():
    leaky = stokes_problem(dirichlet=lambda x: np.column_stack([1.0 + x[:, 0], 0 * x[:, 0]]))
    disc = Discretization(build_initial_mesh(UNIT))
    raw = dirichlet_data(disc, leaky, flux_correction=False)
    fixed, values = dirichlet_data(disc, leaky)
    # a net boundary flux would make an exactly divergence free fill impossible
    sol_u, _ = _solve_linear(assemble(disc, leaky, dirichlet=(fixed, values)), disc.mesh)
    assert disc.divergence_l2(sol_u) <= 1e-12
    assert not np.allclose(raw[1], values)


def test_channel_gauge_and_neumann():
    problem = channel_problem(10.0, ChannelGeometry(height=4, upstream=2, downstream=4))
    disc = Discretization(build_initial_mesh(problem.geometry))
    sysm = assemble(disc, problem)
    assert not sysm.mean_zero
    with pytest.raises(ValueError):
        assemble(disc, problem, gauge="mean-zero")
    with pytest.raises(ValueError):
        pressure_gauge(problem, "something")


def test_mean_zero_pressure():
    problem = manufactured_problem("test2", 1.0, Rectangle(0, -1, 2, 1, cell=0.5))
    disc = Discretization(build_initial_mesh(problem.geometry))
    _, p = _solve_linear(assemble(disc, problem), disc.mesh)
    assert abs(disc.mean_row @ p) <= 1e-11 * np.linalg.norm(p)


def test_divergence_free_interpolant_in_kernel_of_B():
    mesh = refine(build_initial_mesh(UNIT), [0, 3])
    disc = Discretization(mesh)

    def field(x):   # rotated gradient of x^2 y^2 / 2
        X, Y = x[:, 0], x[:, 1]
        return np.column_stack([X**2 * Y, -X * Y**2])

    u = disc.interpolate(field)
    assert np.abs(disc.B @ u).max() <= 1e-13
    assert disc.divergence_l2(u) <= 1e-13


def test_newton_matrix_at_zero_is_stokes():
    problem = manufactured_problem("test2", 3.0, Rectangle(0, -1, 2, 1, cell=0.5))
    disc = Discretization(build_initial_mesh(problem.geometry))
    a = assemble(disc, problem)
    b = assemble(disc, problem, w=np.zeros(disc.n_velocity))
    assert abs(a.matrix - b.matrix).max() == 0
    assert np.array_equal(a.rhs, b.rhs)


def test_condensed_solve_matches_full():
    problem = manufactured_problem("test2", 2.0, Rectangle(0, -1, 2, 1, cell=0.5))
    disc = Discretization(refine(build_initial_mesh(problem.geometry), [1, 6]))
    rng = np.random.default_rng(4)
    w = disc.interpolate(problem.exact.u) + 0.1 * rng.standard_normal(disc.n_velocity)
    uc, pc = _solve_linear(assemble(disc, problem, w=w), disc.mesh)
    uf, pf = _solve_linear(assemble(disc, problem, w=w, condense=False), disc.mesh)
    assert np.allclose(uc, uf, atol=1e-11 * np.abs(uf).max())
    assert np.allclose(pc, pf, atol=1e-10 * np.abs(pf).max())
    # condensed solution has zero moments
    assert np.all(uc[disc.moment_offset:] == 0)


def test_stokes_residual_is_convection_term():
    problem = manufactured_problem("test2", 5.0, Rectangle(0, -1, 2, 1, cell=0.5))
    disc = Discretization(build_initial_mesh(problem.geometry))
    u, p = _solve_linear(assemble(disc, problem), disc.mesh)
    r = nonlinear_residual(disc, problem, u, p)
    C = disc.convection_matrix(u)
    fixed, _ = dirichlet_data(disc, problem)
    free = np.setdiff1d(np.arange(disc.n_velocity), fixed)
    # Stokes solve: the nonlinear residual is exactly the convection term
    assert np.allclose(r[:len(free)], (C @ u)[free], atol=1e-11)
    assert np.abs(r[len(free):]).max() <= 1e-11


def test_non_finite_dirichlet_data():
    bad = stokes_problem(dirichlet=lambda x: np.full((len(x), 2), np.nan))
    disc = Discretization(build_initial_mesh(UNIT))
    with pytest.raises(ValueError):
        dirichlet_data(disc, bad)
