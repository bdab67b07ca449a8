"""Command line driver: ``run <config>``, ``verify <suite>``, ``export <state-dir>``.

Config files are flat ``key = value`` lines; ``#`` starts a comment. See
the README for the recognised keys. Exit codes are 0 on success, 1 when
the run does not reach the stopping tolerance, 2 on configuration errors
and 3 when a linear solve fails.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .diagnostics import mk_residual, write_trace_csv
from .dynamics import DEFAULT_MAX_STEPS, DEFAULT_TAU, SOLVER_TOL, StepSchedule, run_to_steady
from .errors import (
    ConfigError,
    ContractError,
    ConvergenceError,
    InvalidGeometryError,
    NonConvergenceError,
    PhysarumError,
    ResolutionTooCoarseError,
    SingularSystemError,
)
from .fem import assemble_load, coarse_gradient_magnitudes, solve_potential
from .mesh import read_mesh, refine_uniform, write_mesh
from .scenarios import (
    MAZE_SCHEDULE,
    OT_SCHEDULE,
    OTGeometry,
    INITIAL_CONDITIONS,
    load_mask,
    maze_scenario,
    ot_scenario,
)

__all__ = ["RunConfig", "parse_config", "run", "export_vtk", "export_state", "main"]

EXIT_OK, EXIT_NONCONVERGED, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3
OUTPUT_ENV = "PHYSARUM_OUTPUT_DIR"


@dataclass(frozen=True)
class RunConfig:
    scenario: str
    output: str = "output"
    resolution: int = 64
    mesh: str | None = None
    mask: str = "maze128.txt"
    kind: str = "homogeneous"
    ic: str = "uniform"
    tau: float = DEFAULT_TAU
    max_steps: int = DEFAULT_MAX_STEPS
    dt0: float | None = None
    growth: float | None = None
    dt_cap: float | None = None
    snapshots: tuple = ()
    solver_tol: float = SOLVER_TOL
    geometry: OTGeometry = OTGeometry()


_FLOAT_KEYS = {"tau", "dt0", "growth", "dt_cap", "solver_tol"}
_INT_KEYS = {"resolution", "max_steps"}
_STR_KEYS = {"scenario", "output", "mesh", "mask", "kind", "ic"}
_GEOMETRY_KEYS = {
    "source_center": 2,
    "source_radius": 1,
    "sink_center": 2,
    "sink_semi_axes": 2,
    "obstacle_center": 2,
    "obstacle_semi_axes": 2,
    "obstacle_angle_deg": 1,
}


def _numbers(key, text, count=None):
    try:
        values = tuple(float(v) for v in text.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"{key}: expected numbers, got {text!r}")
    if count is not None and len(values) != count:
        raise ConfigError(f"{key}: expected {count} number(s), got {len(values)}")
    return values


def parse_config(text, base_dir="."):
    """Parse and validate a config; relative paths resolve against ``base_dir``."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        raw[key] = value
    known = _FLOAT_KEYS | _INT_KEYS | _STR_KEYS | set(_GEOMETRY_KEYS) | {"snapshots"}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown keys: {', '.join(unknown)}")
    if "scenario" not in raw:
        raise ConfigError("missing required key 'scenario'")

    kwargs, geometry = {}, {}
    for key, value in raw.items():
        if key in _FLOAT_KEYS:
            kwargs[key] = _numbers(key, value, 1)[0]
        elif key in _INT_KEYS:
            try:
                kwargs[key] = int(value)
            except ValueError:
                raise ConfigError(f"{key}: expected an integer, got {value!r}")
        elif key in _GEOMETRY_KEYS:
            nums = _numbers(key, value, _GEOMETRY_KEYS[key])
            geometry[key] = nums if len(nums) > 1 else nums[0]
        elif key == "snapshots":
            kwargs[key] = tuple(sorted(_numbers(key, value), reverse=True))
        else:
            kwargs[key] = value
    cfg = RunConfig(geometry=replace(OTGeometry(), **geometry), **kwargs)
    base = Path(base_dir)
    if cfg.mesh is not None:
        cfg = replace(cfg, mesh=str(base / cfg.mesh))
    if cfg.scenario == "maze" and (base / cfg.mask).exists():
        cfg = replace(cfg, mask=str(base / cfg.mask))
    validate(cfg)
    return cfg


def validate(cfg):
    if cfg.scenario not in ("maze", "ot"):
        raise ConfigError(f"scenario must be 'maze' or 'ot', got {cfg.scenario!r}")
    if not cfg.tau > 0:
        raise ConfigError(f"tau must be positive, got {cfg.tau}")
    if cfg.max_steps < 1:
        raise ConfigError(f"max_steps must be at least 1, got {cfg.max_steps}")
    if cfg.resolution < 1:
        raise ConfigError(f"resolution must be at least 1, got {cfg.resolution}")
    if not 0 < cfg.solver_tol < 1:
        raise ConfigError(f"solver_tol must lie in (0, 1), got {cfg.solver_tol}")
    if any(not s > 0 for s in cfg.snapshots):
        raise ConfigError("snapshot thresholds must be positive")
    try:
        schedule_for(cfg)
    except ContractError as exc:
        raise ConfigError(str(exc.args[0]))
    if cfg.scenario == "ot":
        if cfg.ic not in INITIAL_CONDITIONS:
            raise ConfigError(f"ic must be one of {', '.join(INITIAL_CONDITIONS)}, got {cfg.ic!r}")
        if cfg.kind != "homogeneous":
            try:
                k_e = float(cfg.kind)
            except ValueError:
                raise ConfigError(f"kind must be 'homogeneous' or a positive number, got {cfg.kind!r}")
            if not k_e > 0:
                raise ConfigError(f"k_e must be positive, got {k_e}")
        if cfg.mesh is not None and not Path(cfg.mesh).exists():
            raise ConfigError(f"mesh file {cfg.mesh} does not exist")
        g = cfg.geometry
        if min(g.source_radius, *g.sink_semi_axes, *g.obstacle_semi_axes) <= 0:
            raise ConfigError("geometry radii and semi-axes must be positive")
    else:
        try:
            load_mask(cfg.mask)
        except (OSError, PhysarumError) as exc:
            raise ConfigError(f"cannot read mask {cfg.mask}: {exc}")


def schedule_for(cfg):
    base = MAZE_SCHEDULE if cfg.scenario == "maze" else OT_SCHEDULE
    return StepSchedule(
        dt0=base.dt0 if cfg.dt0 is None else cfg.dt0,
        growth=base.growth if cfg.growth is None else cfg.growth,
        dt_cap=base.dt_cap if cfg.dt_cap is None else cfg.dt_cap,
    )


def build_scenario(cfg):
    schedule = schedule_for(cfg)
    if cfg.scenario == "maze":
        return maze_scenario(load_mask(cfg.mask), cfg.resolution, schedule=schedule, tau=cfg.tau)
    pair = refine_uniform(read_mesh(cfg.mesh)) if cfg.mesh else None
    return ot_scenario(cfg.kind, pair=pair, ic=cfg.ic, geometry=cfg.geometry,
                       schedule=schedule, tau=cfg.tau, resolution=cfg.resolution)


# --- output files -----------------------------------------------------------


def _atomic_write(path, text):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _column(values):
    return "\n".join(f"{float(v):.17g}" for v in values)


def write_fields(path, header, mu, gradmag, u):
    """Per-cell ``mu gradmag`` rows followed by per-node ``u`` values."""
    mu, gradmag = np.asarray(mu), np.asarray(gradmag)
    rows = "\n".join(f"{a:.17g} {b:.17g}" for a, b in zip(mu, gradmag))
    text = f"# {header}\ncells {len(mu)}\n{rows}\nnodes {len(u)}\n{_column(u)}\n"
    _atomic_write(path, text)


def read_fields(path):
    lines = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
    m = int(lines[0].split()[1])
    cells = np.array([[float(v) for v in ln.split()] for ln in lines[1 : m + 1]]).reshape(m, 2)
    n = int(lines[m + 1].split()[1])
    u = np.array([float(v) for v in lines[m + 2 : m + 2 + n]])
    return cells[:, 0], cells[:, 1], u


def export_vtk(mesh, path, cell_fields=None, point_fields=None, title="physarum fields"):
    """Write a legacy ASCII VTK unstructured grid of triangles."""
    cell_fields = cell_fields or {}
    point_fields = point_fields or {}
    nodes, tris = mesh.nodes, mesh.triangles
    out = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID"]
    out.append(f"POINTS {len(nodes)} double")
    out += [f"{x:.17g} {y:.17g} 0" for x, y in nodes]
    out.append(f"CELLS {len(tris)} {4 * len(tris)}")
    out += [f"3 {a} {b} {c}" for a, b, c in tris]
    out.append(f"CELL_TYPES {len(tris)}")
    out += ["5"] * len(tris)
    for header, fields, count in (("CELL_DATA", cell_fields, len(tris)), ("POINT_DATA", point_fields, len(nodes))):
        if not fields:
            continue
        out.append(f"{header} {count}")
        for name, values in fields.items():
            values = np.asarray(values, dtype=float)
            if values.shape != (count,):
                raise ContractError(f"field {name!r} has shape {values.shape}, expected ({count},)", module="cli")
            out += [f"SCALARS {name} double 1", "LOOKUP_TABLE default", _column(values)]
    _atomic_write(path, "\n".join(out) + "\n")


def run(cfg, out_dir=None, log=print):
    """Run one configured scenario; returns an exit code."""
    out = Path(out_dir or os.environ.get(OUTPUT_ENV) or cfg.output)
    try:
        sc = build_scenario(cfg)
        load = assemble_load(sc.pair, sc.f)
    except (ResolutionTooCoarseError, InvalidGeometryError, ContractError, OSError) as exc:
        log(f"error: {exc}")
        return EXIT_CONFIG
    out.mkdir(parents=True, exist_ok=True)
    write_mesh(sc.pair.coarse, out / "mesh.txt")
    _atomic_write(out / "k.txt", _column(sc.k) + "\n")

    pending = list(cfg.snapshots)

    def snapshot(state):
        while pending and state.trace[-1].variation <= pending[0]:
            thr = pending.pop(0)
            sol = solve_potential(sc.pair, state.mu, load, tol=cfg.solver_tol, x0=state.u)
            g = coarse_gradient_magnitudes(sc.pair, sol.u)
            header = f"threshold {thr:.17g} step {state.j} t {state.t:.17g} variation {state.trace[-1].variation:.17g}"
            write_fields(out / f"field_{len(cfg.snapshots) - len(pending) - 1:03d}.txt", header, state.mu, g, sol.u)

    status = EXIT_OK
    try:
        state = run_to_steady(sc.pair, sc.mu0, sc.k, load, sc.schedule, sc.tau, cfg.max_steps,
                              solver_tol=cfg.solver_tol, callback=snapshot)
    except NonConvergenceError as exc:
        log(f"error: {exc}")
        state, status = exc.state, EXIT_NONCONVERGED
    except (ConvergenceError, SingularSystemError) as exc:
        log(f"error: {exc}")
        return EXIT_SOLVER

    write_trace_csv(state.trace, out / "trace.csv")
    last = state.trace[-1]
    summary = {
        "scenario": sc.name,
        "converged": str(state.converged).lower(),
        "steps": state.j,
        "final_t": f"{state.t:.17g}",
        "final_variation": f"{last.variation:.17g}",
        "lyapunov": f"{last.lyapunov:.17g}",
    }
    if state.converged:
        write_fields(out / "final.txt", f"final step {state.j} t {state.t:.17g}", state.mu, state.gradmag, state.u)
        sup, viol = mk_residual(sc.pair, state.mu, state.u, sc.k)
        summary["mk_residual"] = f"{sup:.17g}"
        summary["mk_constraint_violation"] = f"{viol:.17g}"
    _atomic_write(out / "summary.txt", "".join(f"{k} = {v}\n" for k, v in summary.items()))
    log(f"{sc.name}: {state.j} steps, t = {state.t:.6g}, variation = {last.variation:.3e}")
    return status


def export_state(state_dir):
    """Convert every field file of a run directory into a ``.vtk`` on the fine mesh."""
    state_dir = Path(state_dir)
    pair = refine_uniform(read_mesh(state_dir / "mesh.txt"))
    k = np.loadtxt(state_dir / "k.txt", ndmin=1)
    written = []
    for path in sorted(state_dir.glob("field_*.txt")) + sorted(state_dir.glob("final.txt")):
        mu, gradmag, u = read_fields(path)
        p = pair.parent
        cells = {"mu": mu[p], "k": k[p], "gradmag": gradmag[p], "flux": (mu * gradmag)[p]}
        target = path.with_suffix(".vtk")
        export_vtk(pair.fine, target, cells, {"u": u})
        written.append(target)
    return written


def main(argv=None):
    parser = argparse.ArgumentParser(prog="physarum", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run a scenario to steady state")
    p_run.add_argument("config")
    p_run.add_argument("-o", "--output", help=f"output directory (overrides ${OUTPUT_ENV} and the config)")
    p_ver = sub.add_parser("verify", help="run acceptance suites")
    p_ver.add_argument("suite", nargs="?", default="all")
    p_exp = sub.add_parser("export", help="write VTK files for a run directory")
    p_exp.add_argument("state_dir")
    args = parser.parse_args(argv)

    if args.command == "run":
        try:
            path = Path(args.config)
            cfg = parse_config(path.read_text(), base_dir=path.parent)
        except OSError as exc:
            print(f"error: [cli] cannot read config: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        except ConfigError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        return run(cfg, args.output)
    if args.command == "verify":
        from .verify import SUITES, run_suites

        if args.suite not in SUITES and args.suite != "all":
            print(f"error: [cli] unknown suite {args.suite!r}; choose from all, {', '.join(SUITES)}", file=sys.stderr)
            return EXIT_CONFIG
        return 0 if run_suites(args.suite) else 1
    try:
        for path in export_state(args.state_dir):
            print(path)
    except (OSError, PhysarumError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return 0


if __name__ == "__main__":
    sys.exit(main())
