"""SOLVE -> ESTIMATE -> MARK -> REFINE loops and run persistence."""
import csv
import json
import logging
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .assembly import Discretization, KernelCache
from .estimator import COMPONENTS, estimate
from .mesh import ChannelGeometry, build_initial_mesh, dorfler_mark, refine, refine_uniform
from .postprocess import pressure_error, recirculation_length, velocity_error
from .solver import SolverError, newton_solve, solve_with_continuation

log = logging.getLogger(__name__)

DEFAULT_STEPS = 20
SOLUTION_MAGIC = b"VEMNSSOL"

SUMMARY_FIELDS = (
    ["step", "elements", "n_dof", "newton_iterations", "converged", "eta"]
    + ["eta_" + c for c in COMPONENTS]
    + ["velocity_error", "pressure_error", "recirculation_length", "marked", "wall_time"]
)


@dataclass
class StepRecord:
    step: int
    mesh: object
    solution: object
    breakdown: object
    marked: np.ndarray = None
    velocity_error: float = float("nan")
    pressure_error: float = float("nan")
    recirculation: float = float("nan")
    wall_time: float = 0.0

    @property
    def n_dof(self):
        return self.solution.n_dof

    def summary(self):
        g = self.breakdown.global_components()
        row = {
            "step": self.step,
            "elements": self.mesh.n_elements,
            "n_dof": self.n_dof,
            "newton_iterations": self.solution.iterations,
            "converged": int(self.solution.converged),
            "eta": self.breakdown.eta,
            "velocity_error": self.velocity_error,
            "pressure_error": self.pressure_error,
            "recirculation_length": self.recirculation,
            "marked": -1 if self.marked is None else len(self.marked),
            "wall_time": self.wall_time,
        }
        row.update({"eta_" + c: g[c] for c in COMPONENTS})
        return row


@dataclass
class RunHistory:
    problem: object
    mode: str
    theta: float = None
    records: list = field(default_factory=list)
    failure: str = None

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i):
        return self.records[i]

    @property
    def last(self):
        return self.records[-1]

    def column(self, name):
        return np.array([r.summary()[name] for r in self.records], dtype=float)

    def summary_rows(self):
        return [r.summary() for r in self.records]

    def save(self, out_dir):
        """Per-step mesh JSON, solution binary, estimator CSV, Newton log and summary.csv."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for r in self.records:
            d = out / f"step_{r.step:03d}"
            d.mkdir(exist_ok=True)
            r.mesh.to_json(d / "mesh.json")
            write_solution(d / "solution.bin", r.solution)
            r.breakdown.write_csv(d / "estimator.csv")
            r.solution.write_log(d / "newton.csv")
        write_summary(out / "summary.csv", self.summary_rows())
        if self.failure:
            (out / "FAILED").write_text(self.failure + "\n")


def write_summary(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS)
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def write_solution(path, solution):
    """Binary layout: magic, uint32 header length, JSON header, float64 u then p."""
    header = json.dumps({
        "format": "vemns.solution", "version": 1, "dtype": "<f8",
        "n_velocity": int(len(solution.u)), "n_pressure": int(len(solution.p)),
        "converged": bool(solution.converged), "iterations": int(solution.iterations),
    }).encode()
    with open(path, "wb") as fh:
        fh.write(SOLUTION_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(np.asarray(solution.u, "<f8").tobytes())
        fh.write(np.asarray(solution.p, "<f8").tobytes())


def read_solution(path):
    """Return (header dict, u, p) from a file written by :func:`write_solution`."""
    data = Path(path).read_bytes()
    if not data.startswith(SOLUTION_MAGIC):
        raise ValueError(f"{path}: not a vemns solution file")
    (n,) = struct.unpack_from("<I", data, len(SOLUTION_MAGIC))
    start = len(SOLUTION_MAGIC) + 4
    header = json.loads(data[start:start + n])
    vals = np.frombuffer(data[start + n:], dtype="<f8")
    nu = header["n_velocity"]
    return header, vals[:nu].copy(), vals[nu:nu + header["n_pressure"]].copy()


def _solve_step(problem, mesh, cache, solver_opts):
    opts = dict(solver_opts or {})
    continuation = opts.pop("continuation", False)
    disc = Discretization(mesh, cache)
    if continuation:
        return solve_with_continuation(problem, disc=disc, **opts)
    return newton_solve(problem, disc=disc, **opts)


def _record(step, problem, mesh, sol, t0):
    b = estimate(sol, problem)
    rec = StepRecord(step, mesh, sol, b)
    if problem.exact is not None:
        rec.velocity_error = velocity_error(sol, problem.exact.grad_u)
        rec.pressure_error = pressure_error(sol, problem.exact.p)
    if isinstance(problem.geometry, ChannelGeometry):
        rec.recirculation = recirculation_length(sol, problem.geometry)
    rec.wall_time = time.perf_counter() - t0
    return rec


def _loop(problem, mesh, steps, next_mesh, mode, theta=None, dof_budget=None,
          solver_opts=None, callback=None):
    if steps < 1:
        raise ValueError("steps must be >= 1")
    mesh = mesh or build_initial_mesh(problem.geometry)
    cache = KernelCache()
    hist = RunHistory(problem, mode, theta)
    for step in range(steps + 1):
        t0 = time.perf_counter()
        try:
            sol = _solve_step(problem, mesh, cache, solver_opts)
        except SolverError as exc:
            hist.failure = f"step {step}: {exc}"
            log.error(hist.failure)
            break
        rec = _record(step, problem, mesh, sol, t0)
        hist.records.append(rec)
        log.info("step %d: %d elements, N_dof %d, eta %.4e, newton %d%s",
                 step, mesh.n_elements, rec.n_dof, rec.breakdown.eta, sol.iterations,
                 "" if sol.converged else " (not converged)")
        if callback is not None:
            callback(rec)
        if not sol.converged:
            hist.failure = f"step {step}: Newton did not converge in {sol.iterations} iterations"
        if step == steps or (dof_budget is not None and rec.n_dof >= dof_budget):
            break
        mesh, rec.marked = next_mesh(mesh, rec)
    return hist


def run_uniform(problem, steps, mesh=None, solver_opts=None, dof_budget=None, callback=None):
    """Solve on the initial mesh and after each of ``steps`` uniform refinements."""
    def nxt(m, rec):
        return refine_uniform(m), np.arange(m.n_elements)
    return _loop(problem, mesh, steps, nxt, "uniform", dof_budget=dof_budget,
                 solver_opts=solver_opts, callback=callback)


def run_adaptive(problem, theta=0.4, steps=DEFAULT_STEPS, mesh=None, dof_budget=None,
                 solver_opts=None, callback=None):
    """Adaptive loop with Dorfler marking; stops after ``steps`` refinements or
    once N_dof reaches ``dof_budget``, whichever comes first."""
    if not 0.0 < theta < 1.0:
        raise ValueError("theta must lie in (0, 1)")

    def nxt(m, rec):
        marked = dorfler_mark(rec.breakdown.eta2, theta)
        return refine(m, marked), marked
    return _loop(problem, mesh, steps, nxt, "adaptive", theta, dof_budget,
                 solver_opts, callback)


def refinement_imbalance(mesh, x_axis):
    """Refined elements (level > 0) left minus right of the vertical line x = x_axis."""
    cx = np.array([mesh.element_vertices(e)[:, 0].mean() for e in range(mesh.n_elements)])
    fine = mesh.levels > 0
    return int(np.sum(fine & (cx < x_axis)) - np.sum(fine & (cx > x_axis)))
