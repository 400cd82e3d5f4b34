"""Order-2 divergence-free virtual elements for steady incompressible
Navier-Stokes on quad-tree meshes, with a residual a posteriori estimator
and Dorfler-driven adaptive refinement."""
from .adapt import RunHistory, run_adaptive, run_uniform
from .assembly import Discretization, KernelCache, assemble
from .element import ElementKernel, build_dof_map, compute_projections, sigma_E
from .estimator import EstimatorBreakdown, component_table, estimate
from .mesh import (
    ChannelGeometry,
    QuadTreeMesh,
    Rectangle,
    build_initial_mesh,
    check_invariants,
    dorfler_mark,
    refine,
    refine_uniform,
)
from .polybasis import ScaledMonomialBasis, polygon_quadrature
from .postprocess import export_fields, pressure_error, recirculation_length, velocity_error
from .problems import ProblemSpec, channel_problem, manufactured_problem
from .solver import DiscreteSolution, newton_solve, solve_stokes

__version__ = "0.1.0"
