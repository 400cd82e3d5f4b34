"""Refinement studies shared by the acceptance checks, reduced to small
per-step summaries so that large histories are not kept in memory."""
import math
import time

import numpy as np

from vemns.adapt import refinement_imbalance, run_adaptive, run_uniform
from vemns.mesh import ChannelGeometry, Rectangle
from vemns.problems import channel_problem, manufactured_problem

# manufactured-solution domains and initial square edge
DOMAINS = {
    "test1": Rectangle(0.0, 0.0, 1.0, 1.0, cell=0.25),
    "test2": Rectangle(0.0, -2.5, 5.0, 2.5, cell=0.5),
}
UNIFORM_STEPS = 4
TARGET_LENGTHS = {10: 1.50, 15: 1.79, 20: 2.09, 25: 2.39, 30: 2.70, 35: 3.00, 40: 3.29, 45: 3.58, 50: 3.79, 55: 4.15}
ADAPT_THETA = 0.4
ADAPT_STEPS = 20


def _u_scale(sol):
    """sqrt(|Omega|) * max |u dof| as the size of the velocity field."""
    m = sol.mesh
    area = float(m.element_areas().sum())
    return np.sqrt(area) * float(np.abs(sol.u[:sol.disc.moment_offset]).max(initial=0.0))


def step_summary(rec):
    sol = rec.solution
    b = rec.breakdown
    return {
        "step": rec.step,
        "elements": rec.mesh.n_elements,
        "n_dof": rec.n_dof,
        "iterations": sol.iterations,
        "converged": sol.converged,
        "increments": [row["increment"] for row in sol.log],
        "eta": b.eta,
        "components": b.global_components(),
        "dominant": b.dominant(),
        "sigma": float(np.sqrt((b.sigma**2).sum())),
        "velocity_error": rec.velocity_error,
        "pressure_error": rec.pressure_error,
        "recirculation": rec.recirculation,
        "divergence": sol.disc.divergence_l2(sol.u),
        "u_scale": _u_scale(sol),
    }


def uniform_study(case, re, steps=UNIFORM_STEPS):
    problem = manufactured_problem(case, re, DOMAINS[case])
    t0 = time.perf_counter()
    hist = run_uniform(problem, steps)
    rows = [step_summary(r) for r in hist.records]
    return {"case": case, "re": re, "nu": problem.nu, "rows": rows, "failure": hist.failure,
            "seconds": time.perf_counter() - t0}


def _dorfler_ok(eta2, marked, theta):
    """Exact Dorfler inequality for the marked set (compensated sums)."""
    return math.fsum(eta2[marked]) >= theta * math.fsum(eta2)


def cylinder_study(re, theta=ADAPT_THETA, steps=ADAPT_STEPS, geometry=None):
    geometry = geometry or ChannelGeometry()
    problem = channel_problem(re, geometry)
    rows = []

    def cb(rec):
        row = step_summary(rec)
        row["max_hanging"] = int(rec.mesh.hanging_counts().max(initial=0))
        row["imbalance"] = refinement_imbalance(rec.mesh, geometry.center[0])
        rows.append(row)

    t0 = time.perf_counter()
    hist = run_adaptive(problem, theta, steps, callback=cb)
    for rec, row in zip(hist.records, rows):
        row["dorfler_ok"] = None
        if rec.marked is not None:
            row["dorfler_ok"] = _dorfler_ok(rec.breakdown.eta2, rec.marked, theta)
            row["marked"] = len(rec.marked)
    out = {"re": re, "rows": rows, "failure": hist.failure,
           "seconds": time.perf_counter() - t0,
           "length": rows[-1]["recirculation"] if rows else float("nan")}
    del hist
    return out


def loglog_slope(n_dof, values):
    x = np.log(np.asarray(n_dof, float))
    y = np.log(np.asarray(values, float))
    return float(np.polyfit(x, y, 1)[0])
