"""The discrete slime-mould model on a weighted graph, with ``g(x) = x``.

Conductivities ``D_e`` evolve by ``D' = |Q| - D`` where the fluxes ``Q``
solve the Kirchhoff/Poiseuille network problem for the current ``D``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import Delaunay

from .dynamics import StepSchedule
from .errors import ContractError, NonConvergenceError, SingularSystemError

__all__ = [
    "Graph",
    "GraphRecord",
    "GraphRun",
    "D_FLOOR",
    "GRAPH_SCHEDULE",
    "kirchhoff_solve",
    "evolve",
    "transport_cost",
    "diamond_graph",
    "delaunay_graph",
    "read_graph",
    "write_graph",
]

D_FLOOR = 1e-12
KIRCHHOFF_TOL = 1e-10
GRAPH_SCHEDULE = StepSchedule(dt0=1e-2, growth=1.01, dt_cap=0.5)


@dataclass(frozen=True, eq=False)
class Graph:
    """Connected graph with positive edge lengths and a balanced source.

    ``edges[e] = (u, v)``; a positive flux on edge ``e`` runs from ``u`` to
    ``v``. ``source[v] > 0`` injects mass at ``v``.
    """

    n_vertices: int
    edges: np.ndarray
    lengths: np.ndarray
    source: np.ndarray

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        lengths = np.asarray(self.lengths, dtype=float)
        source = np.asarray(self.source, dtype=float)
        n = int(self.n_vertices)
        if source.shape != (n,):
            raise ContractError(f"source must have {n} entries", module="graph")
        if len(lengths) != len(edges) or len(edges) == 0:
            raise ContractError("need one positive length per edge and at least one edge", module="graph")
        if edges.min() < 0 or edges.max() >= n:
            raise ContractError("edge endpoint out of range", module="graph")
        if np.any(edges[:, 0] == edges[:, 1]):
            raise ContractError("self-loops are not allowed", module="graph")
        if not np.all(lengths > 0):
            raise ContractError("edge lengths must be positive", module="graph")
        if abs(source.sum()) > 1e-12 * max(np.abs(source).sum(), 1.0):
            raise ContractError(f"source sums to {source.sum()!r}, not zero", module="graph")
        adj = coo_matrix((np.ones(len(edges)), (edges[:, 0], edges[:, 1])), shape=(n, n))
        if connected_components(adj, directed=False)[0] != 1:
            raise ContractError("graph is not connected", module="graph")
        object.__setattr__(self, "n_vertices", n)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "lengths", lengths)
        object.__setattr__(self, "source", source)

    @property
    def n_edges(self):
        return len(self.edges)

    def incidence(self):
        """Dense (E, V) signed incidence: +1 at the tail, -1 at the head."""
        return self._incidence.copy()

    @cached_property
    def _incidence(self):
        B = np.zeros((self.n_edges, self.n_vertices))
        idx = np.arange(self.n_edges)
        B[idx, self.edges[:, 0]] = 1.0
        B[idx, self.edges[:, 1]] = -1.0
        B.flags.writeable = False
        return B

    def scaled(self, c):
        return Graph(self.n_vertices, self.edges, self.lengths, c * self.source)


def kirchhoff_solve(g, d):
    """Zero-mean pressures and edge fluxes for conductivities ``d``.

    Returns
    -------
    p : (V,) ndarray
    Q : (E,) ndarray
        ``Q_e = d_e (p_u - p_v) / L_e``; net outflow at ``v`` equals ``f_v``.
    """
    d = np.asarray(d, dtype=float)
    if d.shape != (g.n_edges,) or not np.all(d > 0):
        raise ContractError("conductivities must be positive, one per edge", module="graph")
    incident_live = np.zeros(g.n_vertices, dtype=bool)
    live = d > D_FLOOR
    incident_live[g.edges[live].ravel()] = True
    isolated = (~incident_live) & (g.source != 0)
    if isolated.any():
        raise SingularSystemError(
            f"vertex {int(np.flatnonzero(isolated)[0])} has a source but only floor conductivities"
        )
    B = g._incidence
    w = d / g.lengths
    lap = B.T @ (w[:, None] * B)
    n = g.n_vertices
    p = np.linalg.solve(lap + 1.0 / n, g.source)
    p -= p.mean()
    Q = w * (B @ p)
    scale = np.abs(g.source).sum()
    residual = np.abs(B.T @ Q - g.source).max()
    if residual > KIRCHHOFF_TOL * max(scale, 1.0):
        raise SingularSystemError(f"Kirchhoff residual {residual:.3e} exceeds tolerance")
    return p, Q


def transport_cost(g, Q):
    """``sum_e |Q_e| L_e``."""
    return float(np.abs(np.asarray(Q, dtype=float)) @ g.lengths)


@dataclass(frozen=True)
class GraphRecord:
    step: int
    t: float
    dt: float
    D: np.ndarray
    Q: np.ndarray
    J: float
    variation: float


@dataclass
class GraphRun:
    graph: Graph
    D: np.ndarray
    Q: np.ndarray
    trace: list = field(default_factory=list)
    converged: bool = False

    @property
    def cost(self):
        return transport_cost(self.graph, self.Q)

    def support(self, rel=1e-6):
        """Edge indices with ``D_e > rel * max(D)``."""
        return np.flatnonzero(self.D > rel * self.D.max())


def evolve(g, d0=None, schedule=GRAPH_SCHEDULE, tau=1e-9, max_steps=200_000, floor=D_FLOOR):
    """Forward Euler on ``D' = |Q| - D`` until the relative variation is ``<= tau``.

    The variation uses the same formula as the continuous model, with edge
    lengths as weights.
    """
    D = np.ones(g.n_edges) if d0 is None else np.array(d0, dtype=float)
    if not np.all(D > 0):
        raise ContractError("initial conductivities must be positive", module="graph")
    w = g.lengths
    run = GraphRun(graph=g, D=D, Q=np.zeros(g.n_edges))
    t, dt = 0.0, schedule.dt0
    for step in range(max_steps):
        _, Q = kirchhoff_solve(g, D)
        new = np.maximum(D + dt * (np.abs(Q) - D), floor)
        diff = new - D
        var = math.sqrt(diff * diff @ w) / (dt * math.sqrt(D * D @ w))
        run.trace.append(GraphRecord(step, t, dt, D, Q, transport_cost(g, Q), var))
        run.Q = Q
        D = new
        t += dt
        dt = schedule.next(dt)
        if var <= tau:
            run.converged = True
            break
    run.D = D
    if not run.converged:
        raise NonConvergenceError(
            f"graph variation {run.trace[-1].variation:.3e} > tau={tau:.1e} after {max_steps} steps",
            state=run,
        )
    run.Q = kirchhoff_solve(g, D)[1]
    return run


# --- example graphs -------------------------------------------------------


def diamond_graph():
    """Two parallel routes from vertex 0 to vertex 3, of lengths 2 and 3."""
    edges = [(0, 1), (1, 3), (0, 2), (2, 3)]
    lengths = [1.0, 1.0, 1.5, 1.5]
    return Graph(4, edges, lengths, [1.0, 0.0, 0.0, -1.0])


def delaunay_graph(n_points, seed):
    """Delaunay triangulation of random points in the unit square.

    Edge lengths are Euclidean; unit mass flows from the point nearest
    ``(0, 0)`` to the point nearest ``(1, 1)``.
    """
    rng = np.random.default_rng(seed)
    pts = rng.random((n_points, 2))
    tri = Delaunay(pts)
    pairs = np.sort(tri.simplices[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
    edges = np.unique(pairs, axis=0)
    lengths = np.linalg.norm(pts[edges[:, 0]] - pts[edges[:, 1]], axis=1)
    s = int(np.argmin(np.linalg.norm(pts, axis=1)))
    t = int(np.argmin(np.linalg.norm(pts - 1.0, axis=1)))
    f = np.zeros(n_points)
    f[s], f[t] = 1.0, -1.0
    return Graph(n_points, edges, lengths, f), pts


def write_graph(g, path):
    lines = [f"vertices {g.n_vertices}"]
    lines += [repr(float(v)) for v in g.source]
    lines.append(f"edges {g.n_edges}")
    lines += [f"{u} {v} {float(L)!r}" for (u, v), L in zip(g.edges.tolist(), g.lengths)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_graph(path):
    rows = [line.split() for line in Path(path).read_text().splitlines() if line.strip()]
    if not rows or rows[0][0] != "vertices":
        raise ContractError(f"{path}: expected 'vertices <n>' header", module="graph")
    n = int(rows[0][1])
    source = [float(r[0]) for r in rows[1 : n + 1]]
    head = rows[n + 1]
    if head[0] != "edges":
        raise ContractError(f"{path}: expected 'edges <m>' header", module="graph")
    m = int(head[1])
    body = rows[n + 2 : n + 2 + m]
    if len(body) != m:
        raise ContractError(f"{path}: expected {m} edge lines, found {len(body)}", module="graph")
    edges = [(int(u), int(v)) for u, v, _ in body]
    lengths = [float(L) for _, _, L in body]
    return Graph(n, edges, lengths, source)
