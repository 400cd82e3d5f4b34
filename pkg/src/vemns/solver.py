"""Stokes initial guess and Newton iteration for the discrete problem."""
import csv
import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .assembly import Discretization, assemble, dirichlet_data, nonlinear_residual

log = logging.getLogger(__name__)

NEWTON_TOL = 1e-9
NEWTON_MAX = 10


class SolverError(RuntimeError):
    pass


@dataclass
class DiscreteSolution:
    """Velocity dofs and per-element P1 pressure coefficients on one mesh."""

    u: np.ndarray
    p: np.ndarray
    disc: Discretization
    converged: bool = True
    iterations: int = 0
    log: list = field(default_factory=list)
    n_free: int = 0

    @property
    def mesh(self):
        return self.disc.mesh

    @property
    def n_dof(self):
        """Active unknowns: free velocity dofs plus pressure dofs."""
        return self.n_free + self.disc.n_pressure

    def write_log(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "increment", "residual"])
            for row in self.log:
                w.writerow([row["step"], repr(row["increment"]), repr(row["residual"])])


def _factor(system):
    """Sparse LU in the precomputed fill-reducing order; pivoting is kept
    close to the diagonal so the order survives, with a partial-pivoting
    fallback."""
    perm = system.order
    if perm is not None:
        M = system.matrix[perm][:, perm].tocsc()
        try:
            lu = spla.splu(M, permc_spec="NATURAL", diag_pivot_thresh=1e-3,
                           options={"SymmetricMode": True})
            return lu, perm
        except RuntimeError:
            log.warning("ordered factorization failed, retrying with partial pivoting")
    return spla.splu(system.matrix.tocsc()), None


def _solve_linear(system, mesh=None):
    try:
        lu, perm = _factor(system)
    except RuntimeError as exc:
        where = f" on a mesh with {mesh.n_elements} elements" if mesh is not None else ""
        raise SolverError(f"singular saddle-point matrix{where}: {exc}") from exc
    if perm is None:
        x = lu.solve(system.rhs)
    else:
        x = np.empty_like(system.rhs)
        x[perm] = lu.solve(system.rhs[perm])
    if not np.all(np.isfinite(x)):
        raise SolverError("linear solve produced non-finite values")
    return system.expand(x)


def _residual_norm(disc, problem, u, p, skew, load):
    r = nonlinear_residual(disc, problem, u, p, skew=skew, load=load)
    return float(np.linalg.norm(r))


def solve_stokes(problem, mesh=None, disc=None, gauge=None):
    """Stokes problem with the same spaces and stabilization (c_h dropped)."""
    disc = disc or Discretization(mesh)
    bc = dirichlet_data(disc, problem)
    system = assemble(disc, problem, None, gauge=gauge, dirichlet=bc)
    u, p = _solve_linear(system, disc.mesh)
    return DiscreteSolution(u, p, disc, True, 0, [], n_free=len(system.free))


def newton_solve(problem, mesh=None, disc=None, u0=None, tol=NEWTON_TOL, max_iter=NEWTON_MAX,
                 skew=False, gauge=None):
    """Newton iteration stopped on the raw l2 norm of the velocity-dof increment.

    ``u0`` defaults to the Stokes solution.  Non-convergence is reported via
    ``converged=False`` rather than raised.
    """
    disc = disc or Discretization(mesh)
    bc = dirichlet_data(disc, problem)
    load = disc.load_vector(problem.force)
    if u0 is None:
        u0 = solve_stokes(problem, disc=disc, gauge=gauge).u
    u = np.asarray(u0, float).copy()
    u[bc[0]] = bc[1]
    p = np.zeros(disc.n_pressure)
    history = []
    converged = False
    n_free = disc.n_velocity - len(bc[0])
    for m in range(1, max_iter + 1):
        system = assemble(disc, problem, u, skew=skew, gauge=gauge, dirichlet=bc, load=load)
        u_new, p = _solve_linear(system, disc.mesh)
        inc = float(np.linalg.norm(u_new - u))
        u = u_new
        res = _residual_norm(disc, problem, u, p, skew, load)
        history.append({"step": m, "increment": inc, "residual": res})
        log.debug("newton %d: increment %.3e residual %.3e", m, inc, res)
        if inc < tol:
            converged = True
            break
    return DiscreteSolution(u, p, disc, converged, len(history), history, n_free=n_free)


def solve_with_continuation(problem, mesh=None, disc=None, tol=NEWTON_TOL, max_iter=NEWTON_MAX,
                            skew=False, factor=2.0, start_re=None, u0=None):
    """Newton at the target Reynolds number, falling back to a Re ladder.

    The ladder starts at ``start_re`` (default: target / factor**k below
    10) and multiplies by ``factor``; each rung warm-starts the next.
    """
    disc = disc or Discretization(mesh)
    sol = newton_solve(problem, disc=disc, u0=u0, tol=tol, max_iter=max_iter, skew=skew)
    if sol.converged:
        return sol
    target = problem.reynolds
    re = start_re or target
    while re > 10.0:
        re /= factor
    ladder = []
    while re < target:
        ladder.append(re)
        re *= factor
    ladder.append(target)
    guess = None
    for re in ladder:
        sub = dataclasses.replace(problem, nu=1.0 / re)
        sol = newton_solve(sub, disc=disc, u0=guess, tol=tol, max_iter=max_iter, skew=skew)
        guess = sol.u
        log.info("continuation Re=%g converged=%s iterations=%d", re, sol.converged, sol.iterations)
    return sol
