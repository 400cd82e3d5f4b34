"""Command-line interface: ``vemns run`` and ``vemns sweep``."""
import argparse
import csv
import dataclasses
import json
import logging
import math
import os
import sys
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
from threadpoolctl import threadpool_limits

from .adapt import run_adaptive, run_uniform
from .estimator import COMPONENTS
from .mesh import ChannelGeometry, GeometryError, Rectangle, geometry_from_dict
from .problems import ProblemSpec, channel_problem, manufactured_problem

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3

SWEEP_RE = (10, 15, 20, 25, 30, 35, 40, 45, 50, 55)

log = logging.getLogger("vemns")


class ConfigError(ValueError):
    pass


@dataclasses.dataclass
class RunConfig:
    case: str = "test1"
    re: float = 1.0
    refine: str = "uniform"
    theta: float = 0.4
    steps: int = 4
    dof_budget: int = None
    newton_tol: float = 1e-9
    newton_max: int = 10
    convective: str = "plain"
    continuation: bool = False
    out: str = None
    geometry: object = None
    re_list: list = None
    dirichlet_value: list = None
    force_value: list = None

    def to_dict(self):
        return {k: v for k, v in dataclasses.asdict(self).items() if v is not None}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d, source="<config>", text=None):
        validate_config(d, source, text)
        return cls(**d)

    def validate(self):
        validate_config(self.to_dict(), "<arguments>")
        if self.refine == "adaptive" and not 0.0 < self.theta < 1.0:
            raise ConfigError("theta must lie in (0, 1) for adaptive refinement")

    def solver_opts(self):
        return {"tol": self.newton_tol, "max_iter": self.newton_max,
                "skew": self.convective == "skew", "continuation": self.continuation}


def _schema():
    text = resources.files("vemns").joinpath("schemas/config.schema.json").read_text()
    return json.loads(text)


def _line_of(text, path):
    """Best-effort line number of the last key of a JSON path in the source text."""
    if text is None:
        return None
    keys = [p for p in path if isinstance(p, str)]
    if not keys:
        return None
    needle = f'"{keys[-1]}"'
    for i, line in enumerate(text.splitlines(), 1):
        if needle in line:
            return i
    return None


def validate_config(d, source="<config>", text=None):
    errors = sorted(jsonschema.Draft202012Validator(_schema()).iter_errors(d),
                    key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        msgs = []
        for e in errors:
            where = "/".join(map(str, e.absolute_path)) or "(root)"
            line = _line_of(text, list(e.absolute_path))
            loc = f"{source}:{line}" if line else source
            msgs.append(f"{loc}: {where}: {e.message}")
        raise ConfigError("\n".join(msgs))


def load_config_file(path):
    text = Path(path).read_text()
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from exc
    if not isinstance(d, dict):
        raise ConfigError(f"{path}:1: configuration must be a JSON object")
    validate_config(d, str(path), text)
    return d


def resolve_geometry(cfg):
    g = cfg.geometry
    if isinstance(g, str):
        text = Path(g).read_text()
        try:
            g = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{cfg.geometry}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from exc
        validate_config({"geometry": g}, cfg.geometry, text)
    try:
        if isinstance(g, dict):
            return geometry_from_dict(g)
        return default_geometry(cfg.case)
    except (GeometryError, TypeError) as exc:
        raise ConfigError(f"geometry: {exc}") from exc


def default_geometry(case):
    if case == "cylinder":
        return ChannelGeometry()
    if case == "test2":
        return Rectangle(0.0, -2.5, 5.0, 2.5, cell=0.5)
    return Rectangle(0.0, 0.0, 1.0, 1.0, cell=0.25)


def build_problem(cfg, geometry=None, re=None):
    geometry = geometry or resolve_geometry(cfg)
    re = cfg.re if re is None else re
    if cfg.case in ("test1", "test2"):
        if not isinstance(geometry, Rectangle):
            raise ConfigError(f"case {cfg.case} needs a rectangle geometry")
        return manufactured_problem(cfg.case, re, geometry)
    if cfg.case == "cylinder":
        if not isinstance(geometry, ChannelGeometry):
            raise ConfigError("case cylinder needs a channel geometry")
        return channel_problem(re, geometry)
    # custom: constant Dirichlet data on every boundary label and a constant force
    if not isinstance(geometry, Rectangle):
        raise ConfigError("case custom supports rectangle geometries")
    gval = np.asarray(cfg.dirichlet_value or [0.0, 0.0], float)
    fval = np.asarray(cfg.force_value or [0.0, 0.0], float)
    return ProblemSpec(
        nu=1.0 / re, geometry=geometry,
        force=(lambda x: np.tile(fval, (len(x), 1))) if np.any(fval) else None,
        dirichlet=lambda x: np.tile(gval, (len(x), 1)),
        name="custom",
    )


def run_pipeline(cfg, problem=None):
    problem = problem or build_problem(cfg)
    opts = cfg.solver_opts()
    if cfg.refine == "uniform":
        return run_uniform(problem, cfg.steps, solver_opts=opts, dof_budget=cfg.dof_budget)
    return run_adaptive(problem, cfg.theta, cfg.steps, solver_opts=opts, dof_budget=cfg.dof_budget)


def convergence_rows(history):
    rows = []
    for r in history.records:
        s = r.summary()
        rows.append([s["n_dof"], s["velocity_error"], s["pressure_error"], s["eta"]]
                    + [s["eta_" + c] for c in COMPONENTS])
    return rows


def write_convergence(path, history):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n_dof", "velocity_error", "pressure_error", "eta"] + ["eta_" + c for c in COMPONENTS])
        for row in convergence_rows(history):
            w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])


def print_summary(history, stream=None):
    if stream is None:
        stream = sys.stdout
    channel = isinstance(history.problem.geometry, ChannelGeometry)
    extra = ["L_rec"] if channel else ["|e_u|_1", "|e_p|_0"]
    head = ["step", "elements", "N_dof", "newton", "eta"] + extra + ["dominant"]
    stream.write(" ".join(f"{h:>11}" for h in head) + "\n")
    for r in history.records:
        s = r.summary()
        vals = [s["step"], s["elements"], s["n_dof"], s["newton_iterations"], f"{s['eta']:.4e}"]
        if channel:
            vals.append(f"{s['recirculation_length']:.4f}")
        else:
            vals += [f"{s['velocity_error']:.4e}", f"{s['pressure_error']:.4e}"]
        vals.append("eta_" + r.breakdown.dominant())
        stream.write(" ".join(f"{v:>11}" for v in vals) + "\n")
    if history.failure:
        stream.write(f"failure: {history.failure}\n")


def cmd_run(cfg):
    hist = run_pipeline(cfg)
    print_summary(hist)
    if cfg.out:
        out = Path(cfg.out)
        hist.save(out)
        write_convergence(out / "convergence.csv", hist)
        (out / "config.json").write_text(cfg.to_json() + "\n")
    return EXIT_SOLVER if hist.failure else EXIT_OK


def sweep_recirculation(cfg, re_list, stream=None):
    """Adaptive cylinder runs per Reynolds number; returns [(Re, length or nan, error)]."""
    if stream is None:
        stream = sys.stdout
    geometry = resolve_geometry(dataclasses.replace(cfg, case="cylinder"))
    rows = []
    for re in re_list:
        try:
            problem = build_problem(dataclasses.replace(cfg, case="cylinder"), geometry, re)
            hist = run_pipeline(dataclasses.replace(cfg, case="cylinder", refine="adaptive", re=re), problem)
            length = hist.last.recirculation if len(hist) else math.nan
            err = hist.failure or ""
            if cfg.out:
                hist.save(Path(cfg.out) / f"re_{re:g}")
        except Exception as exc:   # keep sweeping; the failure is reported in the table
            length, err = math.nan, f"{type(exc).__name__}: {exc}"
        rows.append((re, length, err))
        stream.write(f"Re={re:g} recirculation length={length:.4f} {err}\n")
        stream.flush()
    if cfg.out:
        Path(cfg.out).mkdir(parents=True, exist_ok=True)
        with open(Path(cfg.out) / "recirculation.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["re", "recirculation_length", "error"])
            for re, length, err in rows:
                w.writerow([repr(float(re)), repr(float(length)), err])
    return rows


def build_parser():
    p = argparse.ArgumentParser(prog="vemns", description="Divergence-free virtual elements for steady Navier-Stokes.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON configuration file (flags override it)")
        sp.add_argument("--theta", type=float)
        sp.add_argument("--steps", type=int)
        sp.add_argument("--dof-budget", type=int)
        sp.add_argument("--newton-tol", type=float)
        sp.add_argument("--newton-max", type=int)
        sp.add_argument("--convective", choices=["plain", "skew"])
        sp.add_argument("--continuation", action="store_true", default=None,
                        help="retry failed Newton solves along a Reynolds ladder")
        sp.add_argument("--out")
        sp.add_argument("--geometry", help="geometry JSON file")

    r = sub.add_parser("run", help="uniform or adaptive refinement study")
    r.add_argument("--case", choices=["test1", "test2", "cylinder", "custom"])
    r.add_argument("--re", type=float)
    r.add_argument("--refine", choices=["uniform", "adaptive"])
    common(r)

    s = sub.add_parser("sweep", help="recirculation length of the cylinder wake for several Re")
    s.add_argument("--re-list", help="comma separated Reynolds numbers (default: 10,15,...,55)")
    common(s)
    return p


def config_from_args(args):
    base = load_config_file(args.config) if args.config else {}
    over = {}
    for key in ("case", "re", "refine", "theta", "steps", "dof_budget", "newton_tol",
                "newton_max", "convective", "continuation", "out", "geometry"):
        val = getattr(args, key, None)
        if val is not None:
            over[key] = val
    if getattr(args, "re_list", None) is not None:
        try:
            over["re_list"] = [float(x) for x in args.re_list.split(",") if x.strip()]
        except ValueError as exc:
            raise ConfigError(f"--re-list: {exc}") from exc
    merged = {**base, **over}
    cfg = RunConfig(**merged)
    cfg.validate()
    return cfg


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        if args.command == "sweep":
            cfg = dataclasses.replace(cfg, case="cylinder", refine="adaptive")
            if cfg.re_list is None:
                cfg.re_list = list(SWEEP_RE)
            cfg.validate()
        else:
            build_problem(cfg)   # surface geometry/case errors before any work
    except (ConfigError, OSError, TypeError) as exc:
        print(f"vemns: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    threads = os.environ.get("VEMNS_THREADS")
    limit = None
    if threads:
        try:
            limit = max(1, int(threads))
        except ValueError:
            print(f"vemns: configuration error: VEMNS_THREADS={threads!r} is not an integer", file=sys.stderr)
            return EXIT_CONFIG
    with threadpool_limits(limits=limit):
        if args.command == "sweep":
            rows = sweep_recirculation(cfg, cfg.re_list)
            return EXIT_SOLVER if any(err for _, _, err in rows) else EXIT_OK
        return cmd_run(cfg)


if __name__ == "__main__":
    sys.exit(main())
