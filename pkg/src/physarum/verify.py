"""Acceptance checks shared by ``physarum verify`` and the test-suite.

Each ``check_*`` function returns a :class:`Check`. Expensive runs are
memoised per process, so one run feeds every check that needs it.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from functools import lru_cache

import networkx as nx
import numpy as np
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from .diagnostics import (
    check_lyapunov_descent,
    check_mass_bound,
    check_positivity_decay,
    mk_residual,
)
from .dynamics import DEFAULT_MAX_STEPS, run_to_steady
from .fem import MU_FLOOR, assemble_load, solve_neumann, assemble_stiffness, flux_field
from .graph_physarum import delaunay_graph, diamond_graph, evolve
from .mesh import refine_uniform, structured_rect_mesh
from .scenarios import INITIAL_CONDITIONS, load_mask, maze_scenario, ot_scenario

__all__ = ["Check", "SUITES", "run_suites", "ot_run", "maze_run", "shortest_path_graphs"]

OT_RESOLUTION = 64
# 28 x 28 x 2 = 1568 coarse triangles, the structured size closest to the
# reference coarse mesh of 1531 triangles
COARSE_RESOLUTION = 28
MAZE_RESOLUTION = 64
HETERO_RESOLUTION = 32
# k_e = 0.01 cells relax at a rate of order k_e: about 132 000 steps to tau on 32 x 32
HETERO_MAX_STEPS = 200_000
REFERENCE_STEPS = 6641


@dataclass
class Check:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.number}. {self.name}: {self.detail} ({self.seconds:.1f} s)"


def _timed(fn):
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        check = fn(*args, **kwargs)
        check.seconds = time.perf_counter() - t0
        return check

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


# --- memoised runs ------------------------------------------------------------


@dataclass
class Run:
    scenario: object
    state: object
    seconds: float


def _run(sc, max_steps=DEFAULT_MAX_STEPS):
    load = assemble_load(sc.pair, sc.f)
    t0 = time.perf_counter()
    state = run_to_steady(sc.pair, sc.mu0, sc.k, load, sc.schedule, sc.tau, max_steps)
    return Run(sc, state, time.perf_counter() - t0)


@lru_cache(maxsize=None)
def ot_run(kind="homogeneous", ic="uniform", resolution=OT_RESOLUTION):
    max_steps = DEFAULT_MAX_STEPS if kind == "homogeneous" else HETERO_MAX_STEPS
    return _run(ot_scenario(kind, ic=ic, resolution=resolution), max_steps)


@lru_cache(maxsize=None)
def maze_run(resolution=MAZE_RESOLUTION):
    return _run(maze_scenario(load_mask(), resolution))


def _homogeneous_runs():
    runs = [ot_run("homogeneous", ic) for ic in INITIAL_CONDITIONS]
    return runs + [ot_run("homogeneous", "uniform", COARSE_RESOLUTION)]


# --- 1. graph -----------------------------------------------------------------


def _to_networkx(g):
    G = nx.Graph()
    for (a, b), L in zip(g.edges.tolist(), g.lengths):
        G.add_edge(a, b, weight=float(L), index=len(G.edges))
    return G


def _path_edges(g, path):
    lookup = {tuple(sorted(e)): i for i, e in enumerate(g.edges.tolist())}
    return sorted(lookup[tuple(sorted(p))] for p in zip(path, path[1:]))


def shortest_path_graphs(count=5, n_points=25, min_gap=0.02):
    """Random Delaunay graphs whose shortest path beats the runner-up by ``min_gap``."""
    found = []
    seed = 0
    while len(found) < count:
        g, _ = delaunay_graph(n_points, seed)
        s, t = int(np.argmax(g.source)), int(np.argmin(g.source))
        paths = nx.shortest_simple_paths(_to_networkx(g), s, t, weight="weight")
        lengths = [nx.path_weight(_to_networkx(g), next(paths), "weight") for _ in range(2)]
        if lengths[1] > (1 + min_gap) * lengths[0]:
            found.append((seed, g))
        seed += 1
    return found


@_timed
def check_graph():
    """Steady graph support equals the Dijkstra path and J equals its length."""
    cases = [("diamond", diamond_graph())] + [(f"delaunay-{s}", g) for s, g in shortest_path_graphs()]
    failures, worst = [], 0.0
    for name, g in cases:
        s, t = int(np.argmax(g.source)), int(np.argmin(g.source))
        G = _to_networkx(g)
        length, path = nx.single_source_dijkstra(G, s, t, weight="weight")
        run = evolve(g)
        rel = abs(run.cost - length) / length
        worst = max(worst, rel)
        if list(run.support()) != _path_edges(g, path) or rel > 1e-4:
            failures.append(name)
    detail = f"{len(cases)} graphs, max |J - L*|/L* = {worst:.2e}"
    if failures:
        detail += f", mismatched: {', '.join(failures)}"
    return Check(1, "graph shortest path", not failures, detail)


# --- 2. fem -------------------------------------------------------------------

# degree-5 seven-point rule on the reference triangle (barycentric, weights sum to 1)
_A1, _B1 = 0.0597158717897698, 0.4701420641051151
_A2, _B2 = 0.7974269853530873, 0.1012865073234563
_QUAD_BARY = np.array(
    [[1 / 3, 1 / 3, 1 / 3]]
    + [[_A1, _B1, _B1], [_B1, _A1, _B1], [_B1, _B1, _A1]]
    + [[_A2, _B2, _B2], [_B2, _A2, _B2], [_B2, _B2, _A2]]
)
_QUAD_W = np.array([0.225] + [0.1323941527885062] * 3 + [0.1259391805448271] * 3)


def _quad_points(mesh):
    """(F, 7, 2) quadrature points and (F, 7) weights scaled by triangle area."""
    corners = mesh.nodes[mesh.triangles]
    pts = np.einsum("qa,tad->tqd", _QUAD_BARY, corners)
    return pts, _QUAD_W[None, :] * mesh.areas[:, None]


def manufactured_errors(resolutions=(4, 8, 16, 32)):
    """L2 errors of the P1 solution of ``-lap u = pi^2 cos(pi x)`` (Neumann) against ``cos(pi x)``."""
    errors = []
    for n in resolutions:
        pair = refine_uniform(structured_rect_mesh(n, n))
        coarse, fine = pair.coarse, pair.fine
        pts, w = _quad_points(coarse)
        f = (w * np.pi**2 * np.cos(np.pi * pts[..., 0])).sum(axis=1) / coarse.areas
        f -= f @ coarse.areas / coarse.areas.sum()
        A = assemble_stiffness(pair, np.ones(coarse.n_triangles))
        sol = solve_neumann(A, assemble_load(pair, f), mass=fine.lumped_mass)
        qp, qw = _quad_points(fine)
        uh = np.einsum("qa,ta->tq", _QUAD_BARY, sol.u[fine.triangles])
        uh -= (qw * uh).sum() / qw.sum()
        err = uh - np.cos(np.pi * qp[..., 0])
        errors.append(math.sqrt((qw * err**2).sum()))
    return np.array(errors)


@_timed
def check_fem():
    errors = manufactured_errors()
    orders = np.log2(errors[:-1] / errors[1:])
    detail = "L2 orders " + ", ".join(f"{o:.3f}" for o in orders)
    return Check(2, "fem convergence order", bool(orders.min() >= 1.8), detail)


# --- 3.-6., 9. homogeneous transport ------------------------------------------


@_timed
def check_lyapunov():
    runs = [ot_run("homogeneous", ic) for ic in INITIAL_CONDITIONS]
    reports = [check_lyapunov_descent(r.state.trace) for r in runs]
    finals = np.array([r.state.trace[-1].lyapunov for r in runs])
    spread = (finals.max() - finals.min()) / finals.mean()
    worst = max(
        (max(0.0, (b.lyapunov - a.lyapunov) / a.lyapunov) for r in runs for a, b in zip(r.state.trace, r.state.trace[1:])),
        default=0.0,
    )
    monotone = all(rep.passed for rep in reports)
    detail = (
        f"limits {', '.join(f'{v:.6e}' for v in finals)} (spread {spread:.2e}); "
        f"increases over 1e-10: {sum(len(rep.violations) for rep in reports)}, largest relative {worst:.2e}; "
        f"run times {', '.join(f'{r.seconds:.0f}' for r in runs)} s"
    )
    return Check(3, "lyapunov descent and common limit", monotone and spread <= 0.01, detail)


@_timed
def check_mk():
    r = ot_run("homogeneous", "uniform")
    sup, viol = mk_residual(r.scenario.pair, r.state.mu, r.state.u, r.scenario.k)
    detail = f"support residual {sup:.2e}, constraint violation {viol:.2e}"
    return Check(4, "steady Monge-Kantorovich residual", sup <= 0.05 and viol <= 0.05, detail)


@_timed
def check_timeline():
    r = ot_run("homogeneous", "uniform", COARSE_RESOLUTION)
    trace = r.state.trace
    t_milli = next((rec.t + rec.dt for rec in trace if rec.variation <= 1e-3), math.inf)
    steps = r.state.j
    ok = 30 <= t_milli <= 120 and REFERENCE_STEPS / 2 <= steps <= 2 * REFERENCE_STEPS
    detail = (
        f"{COARSE_RESOLUTION}x{COARSE_RESOLUTION} mesh: variation 1e-3 at t = {t_milli:.1f}, "
        f"{steps} steps to tau (t = {r.state.t:.0f})"
    )
    return Check(5, "convergence timeline", ok, detail)


def _all_runs():
    runs = _homogeneous_runs()
    runs += [ot_run(k_e, "uniform", HETERO_RESOLUTION) for k_e in ("0.01", "100")]
    runs.append(maze_run())
    return runs


def _label(run):
    return f"{run.scenario.name}/{run.scenario.pair.coarse.n_triangles}"


@_timed
def check_bounds():
    mass_bad, flux_bad, relaxed_bad = [], [], []
    for r in _all_runs():
        trace = r.state.trace
        report = check_mass_bound(trace)
        if any("mass" in msg for _, msg in report.violations):
            mass_bad.append(_label(r))
        if any("flux" in msg for _, msg in report.violations):
            flux_bad.append(_label(r))
        root2 = math.sqrt(2 * trace[0].lyapunov)
        if any(rec.flux_l1 > root2 * (1 + 1e-8) for rec in trace):
            relaxed_bad.append(_label(r))
    detail = (
        f"{len(_all_runs())} runs; mass bound broken on [{', '.join(mass_bad)}]; "
        f"flux <= sqrt(L0) broken on [{', '.join(flux_bad)}]; "
        f"flux <= sqrt(2 L0) broken on [{', '.join(relaxed_bad)}]"
    )
    return Check(6, "mass and flux bounds", not (mass_bad or flux_bad), detail)


@_timed
def check_positivity():
    bad, worst = [], math.inf
    for r in _homogeneous_runs():
        trace = r.state.trace
        if not check_positivity_decay(trace).passed:
            bad.append(_label(r))
        worst = min(worst, min(rec.min_mu for rec in trace), float(r.state.mu.min()))
    detail = f"smallest density {worst:.3e}; failing runs [{', '.join(bad)}]"
    return Check(9, "positivity and decay estimate", not bad and worst >= MU_FLOOR, detail)


# --- 7. maze ------------------------------------------------------------------


def maze_oracle_path(mask):
    """Cells (row, col) of an 8-connected shortest path from S to T avoiding walls."""
    rows, cols = mask.shape
    free = ~mask.walls
    idx = np.arange(rows * cols).reshape(rows, cols)
    src, dst, wts = [], [], []
    for dr, dc in ((0, 1), (1, 0), (1, 1), (1, -1)):
        a = free[max(0, -dr) : rows - max(0, dr), max(0, -dc) : cols - max(0, dc)]
        r0, c0 = max(0, -dr), max(0, -dc)
        sub_a = idx[r0 : r0 + a.shape[0], c0 : c0 + a.shape[1]]
        sub_b = idx[r0 + dr : r0 + dr + a.shape[0], c0 + dc : c0 + dc + a.shape[1]]
        ok = a & free[r0 + dr : r0 + dr + a.shape[0], c0 + dc : c0 + dc + a.shape[1]]
        if dr and dc:
            # no corner cutting past a wall
            ok &= free[r0 + dr : r0 + dr + a.shape[0], c0 : c0 + a.shape[1]]
            ok &= free[r0 : r0 + a.shape[0], c0 + dc : c0 + dc + a.shape[1]]
        src.append(sub_a[ok])
        dst.append(sub_b[ok])
        wts.append(np.full(ok.sum(), math.hypot(dr, dc)))
    n = rows * cols
    src, dst, wts = np.concatenate(src), np.concatenate(dst), np.concatenate(wts)
    starts = idx[mask.cells == "S"]
    # super-source n joined to every source cell at zero cost (tiny weight keeps the edge)
    src = np.concatenate([src, np.full(len(starts), n)])
    dst = np.concatenate([dst, starts])
    wts = np.concatenate([wts, np.full(len(starts), 1e-12)])
    graph = coo_matrix((wts, (src, dst)), shape=(n + 1, n + 1)).tocsr()
    dist, pred = dijkstra(graph, directed=False, indices=n, return_predecessors=True)
    goals = idx[mask.cells == "T"]
    node = int(goals[np.argmin(dist[goals])])
    path = []
    while node != n:
        path.append(node)
        node = int(pred[node])
    return np.array(np.unravel_index(path[::-1], (rows, cols))).T


@_timed
def check_maze():
    r = maze_run()
    sc, mu = r.scenario, r.state.mu
    mask = sc.regions["mask"]
    rows, cols = mask.shape
    path = maze_oracle_path(mask)
    near = np.zeros(mask.shape, dtype=bool)
    near[path[:, 0], path[:, 1]] = True
    near = ndimage.binary_dilation(near, structure=np.ones((5, 5), dtype=bool))
    # triangles 2c, 2c+1 form grid cell c counted from the bottom row
    cell_mass = (mu * sc.pair.coarse.areas).reshape(-1, 2).sum(axis=1).reshape(rows, cols)[::-1]
    frac = cell_mass[near].sum() / cell_mass.sum()
    walls = sc.regions["wall"]
    wall_max = float(mu[walls].max())
    ok = frac >= 0.9 and wall_max <= MU_FLOOR
    detail = (
        f"{frac:.1%} of mass within 2 cells of the oracle path ({len(path)} cells); "
        f"max wall density {wall_max:.3e}; {r.state.j} steps in {r.seconds:.0f} s"
    )
    return Check(7, "maze shortest corridor", ok, detail)


# --- 8. heterogeneous ---------------------------------------------------------


def ellipse_flux_mass(run):
    sc = run.scenario
    flux = flux_field(sc.pair, run.state.mu, run.state.u)
    inside = sc.regions["obstacle"]
    return float(flux[inside] @ sc.pair.coarse.areas[inside])


@_timed
def check_hetero():
    low = ellipse_flux_mass(ot_run("0.01", "uniform", HETERO_RESOLUTION))
    high = ellipse_flux_mass(ot_run("100", "uniform", HETERO_RESOLUTION))
    ratio = low / high if high > 0 else math.inf
    detail = f"ellipse flux mass k_e=0.01: {low:.4e}, k_e=100: {high:.4e}, ratio {ratio:.3g}"
    return Check(8, "heterogeneous ellipse response", ratio >= 5, detail)


SUITES = {
    "graph": (check_graph,),
    "fem": (check_fem,),
    "lyapunov": (check_lyapunov,),
    "mk": (check_mk,),
    "timeline": (check_timeline,),
    "bounds": (check_bounds,),
    "maze": (check_maze,),
    "hetero": (check_hetero,),
    "positivity": (check_positivity,),
}


def run_suites(name="all", out=print):
    """Run one suite (or all), print a table, return True iff every check passed."""
    checks = [c for suite in SUITES.values() for c in suite] if name == "all" else list(SUITES[name])
    results = []
    for check in checks:
        result = check()
        out(result.line())
        results.append(result)
    passed = sum(r.passed for r in results)
    out(f"{passed}/{len(results)} checks passed")
    return passed == len(results)
