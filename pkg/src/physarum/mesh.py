"""Triangular meshes, uniform 1-to-4 refinement and P1 geometry.

A :class:`TriMesh` stores node coordinates and counterclockwise triangle
connectivity; edges are derived once and ordered lexicographically by
their sorted endpoint indices, so every derived array is deterministic.

Example
-------
>>> coarse = structured_rect_mesh(2, 2)
>>> pair = refine_uniform(coarse)
>>> pair.fine.n_nodes == coarse.n_nodes + coarse.n_edges
True
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import ContractError, InvalidGeometryError

__all__ = [
    "TriMesh",
    "MeshPair",
    "structured_rect_mesh",
    "refine_uniform",
    "triangle_geometry",
    "read_mesh",
    "write_mesh",
]


def _signed_areas(nodes, triangles):
    p0 = nodes[triangles[:, 0]]
    p1 = nodes[triangles[:, 1]]
    p2 = nodes[triangles[:, 2]]
    return 0.5 * (
        (p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
        - (p2[:, 0] - p0[:, 0]) * (p1[:, 1] - p0[:, 1])
    )


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Unstructured triangulation of a planar domain.

    Parameters
    ----------
    nodes : (V, 2) float array
        Node coordinates.
    triangles : (F, 3) int array
        Node indices of each triangle, counterclockwise.
    """

    nodes: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        nodes = np.ascontiguousarray(self.nodes, dtype=float)
        tris = np.ascontiguousarray(self.triangles, dtype=np.int64)
        if nodes.ndim != 2 or nodes.shape[1] != 2:
            raise InvalidGeometryError(f"nodes must have shape (V, 2), got {nodes.shape}")
        if tris.ndim != 2 or tris.shape[1] != 3 or len(tris) == 0:
            raise InvalidGeometryError(f"triangles must have shape (F, 3), got {tris.shape}")
        if tris.min() < 0 or tris.max() >= len(nodes):
            raise InvalidGeometryError("triangle references a node index out of range")
        areas = _signed_areas(nodes, tris)
        if not np.all(areas > 0):
            bad = int(np.flatnonzero(~(areas > 0))[0])
            raise InvalidGeometryError(
                f"triangle {bad} has non-positive signed area {areas[bad]!r}"
            )
        nodes.setflags(write=False)
        tris.setflags(write=False)
        areas.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "triangles", tris)
        object.__setattr__(self, "areas", areas)

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def n_edges(self):
        return len(self.edges)

    @cached_property
    def _edge_data(self):
        tris = self.triangles
        local = np.array([[0, 1], [1, 2], [2, 0]])
        # half-edge k of triangle t is row 3*t + k
        half = np.sort(tris[:, local].reshape(-1, 2), axis=1)
        edges, inverse, counts = np.unique(
            half, axis=0, return_inverse=True, return_counts=True
        )
        inverse = inverse.reshape(-1)
        if counts.max() > 2:
            raise InvalidGeometryError("an edge is shared by more than two triangles")
        owner = np.repeat(np.arange(len(tris)), 3)
        edge_tris = np.full((len(edges), 2), -1, dtype=np.int64)
        order = np.argsort(inverse, kind="stable")
        sorted_edges = inverse[order]
        first = np.ones(len(order), dtype=bool)
        first[1:] = sorted_edges[1:] != sorted_edges[:-1]
        edge_tris[sorted_edges[first], 0] = owner[order[first]]
        edge_tris[sorted_edges[~first], 1] = owner[order[~first]]
        tri_edges = inverse.reshape(-1, 3)
        for arr in (edges, edge_tris, tri_edges):
            arr.setflags(write=False)
        return edges, edge_tris, tri_edges

    @property
    def edges(self):
        """(E, 2) sorted endpoint indices, lexicographic order."""
        return self._edge_data[0]

    @property
    def edge_triangles(self):
        """(E, 2) adjacent triangle indices; ``-1`` marks a missing neighbour."""
        return self._edge_data[1]

    @property
    def triangle_edges(self):
        """(F, 3) edge index of local edges (v0,v1), (v1,v2), (v2,v0)."""
        return self._edge_data[2]

    @property
    def boundary_edges(self):
        return np.flatnonzero(self.edge_triangles[:, 1] < 0)

    @cached_property
    def boundary_nodes(self):
        mask = np.zeros(self.n_nodes, dtype=bool)
        mask[self.edges[self.boundary_edges].ravel()] = True
        return mask

    @cached_property
    def centroids(self):
        return self.nodes[self.triangles].mean(axis=1)

    @cached_property
    def gradients(self):
        """(F, 3, 2) constant gradients of the three nodal basis functions."""
        p = self.nodes[self.triangles]
        x, y = p[..., 0], p[..., 1]
        twice = 2.0 * self.areas
        gx = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
        gy = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
        grads = np.stack([gx, gy], axis=2) / twice[:, None, None]
        grads.setflags(write=False)
        return grads

    @cached_property
    def lumped_mass(self):
        """Nodal lumped-mass weights: a third of each incident triangle area."""
        m = np.zeros(self.n_nodes)
        np.add.at(m, self.triangles.ravel(), np.repeat(self.areas / 3.0, 3))
        return m

    def euler_characteristic(self):
        return self.n_nodes - self.n_edges + self.n_triangles


@dataclass(frozen=True, eq=False)
class MeshPair:
    """Coarse mesh, its uniform refinement, and the parent/child maps.

    ``child[s]`` lists the four fine triangles inside coarse triangle ``s``;
    ``parent[t]`` is the coarse triangle containing fine triangle ``t``.
    """

    coarse: TriMesh
    fine: TriMesh
    parent: np.ndarray
    child: np.ndarray

    @property
    def coarse_areas(self):
        return self.coarse.areas

    @cached_property
    def child_areas(self):
        """(M_2h, 4) fine-triangle areas grouped by parent."""
        return self.fine.areas[self.child]


def structured_rect_mesh(nx, ny, bbox=(0.0, 0.0, 1.0, 1.0)):
    """Regular grid of ``nx * ny`` cells, each split into two triangles.

    Every cell is cut along its lower-left to upper-right diagonal. Nodes
    are numbered row by row from the bottom; cell ``(i, j)`` owns
    triangles ``2 * (j * nx + i)`` and ``2 * (j * nx + i) + 1``.
    """
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise ContractError(f"nx and ny must be positive integers, got {nx}, {ny}", module="mesh")
    nx, ny = int(nx), int(ny)
    x0, y0, x1, y1 = map(float, bbox)
    if not (x1 > x0 and y1 > y0):
        raise InvalidGeometryError(f"bounding box {bbox} has zero or negative size")
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    j, i = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
    a = (j * (nx + 1) + i).ravel()
    b = a + 1
    c = a + nx + 2
    d = a + nx + 1
    tris = np.empty((2 * nx * ny, 3), dtype=np.int64)
    tris[0::2] = np.column_stack([a, b, c])
    tris[1::2] = np.column_stack([a, c, d])
    return TriMesh(nodes, tris)


def refine_uniform(coarse):
    """Split every triangle into four by joining its edge midpoints.

    Fine node ``n`` equals coarse node ``n`` for ``n < N_2h``; node
    ``N_2h + e`` is the midpoint of coarse edge ``e``. Children of coarse
    triangle ``s`` are fine triangles ``4s .. 4s+3`` (three corner
    triangles, then the central one).
    """
    if not isinstance(coarse, TriMesh):
        raise ContractError("refine_uniform expects a TriMesh", module="mesh")
    nv = coarse.n_nodes
    edges = coarse.edges
    mid = 0.5 * (coarse.nodes[edges[:, 0]] + coarse.nodes[edges[:, 1]])
    nodes = np.vstack([coarse.nodes, mid])

    v0, v1, v2 = coarse.triangles.T
    m01, m12, m20 = (nv + coarse.triangle_edges).T
    children = np.stack(
        [
            np.column_stack([v0, m01, m20]),
            np.column_stack([m01, v1, m12]),
            np.column_stack([m20, m12, v2]),
            np.column_stack([m01, m12, m20]),
        ],
        axis=1,
    ).reshape(-1, 3)
    fine = TriMesh(nodes, children)
    m = coarse.n_triangles
    parent = np.repeat(np.arange(m), 4)
    child = np.arange(4 * m).reshape(m, 4)
    parent.setflags(write=False)
    child.setflags(write=False)
    return MeshPair(coarse=coarse, fine=fine, parent=parent, child=child)


def triangle_geometry(mesh, t):
    """Area and P1 basis gradients of triangle ``t``.

    Returns
    -------
    area : float
    grads : (3, 2) ndarray
        Row ``i`` is the gradient of the basis function of local vertex ``i``.
    """
    if not 0 <= t < mesh.n_triangles:
        raise ContractError(f"triangle index {t} out of range", module="mesh")
    p = mesh.nodes[mesh.triangles[t]]
    twice = (p[1, 0] - p[0, 0]) * (p[2, 1] - p[0, 1]) - (p[2, 0] - p[0, 0]) * (p[1, 1] - p[0, 1])
    if twice == 0.0:
        raise InvalidGeometryError(f"triangle {t} is degenerate")
    grads = np.array(
        [
            [p[1, 1] - p[2, 1], p[2, 0] - p[1, 0]],
            [p[2, 1] - p[0, 1], p[0, 0] - p[2, 0]],
            [p[0, 1] - p[1, 1], p[1, 0] - p[0, 0]],
        ]
    ) / twice
    return 0.5 * abs(twice), grads


def write_mesh(mesh, path):
    """Write ``nodes V triangles F`` followed by coordinates and connectivity."""
    lines = [f"nodes {mesh.n_nodes} triangles {mesh.n_triangles}"]
    lines.extend(f"{x!r} {y!r}" for x, y in mesh.nodes.tolist())
    lines.extend(f"{i} {j} {k}" for i, j, k in mesh.triangles.tolist())
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text("\n".join(lines) + "\n")
    os.replace(tmp, path)


def read_mesh(path):
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 4 or header[0] != "nodes" or header[2] != "triangles":
            raise InvalidGeometryError(f"{path}: bad mesh header {' '.join(header)!r}")
        nv, nt = int(header[1]), int(header[3])
        rows = [line.split() for line in fh if line.strip()]
    if len(rows) != nv + nt:
        raise InvalidGeometryError(f"{path}: expected {nv + nt} data lines, found {len(rows)}")
    nodes = np.array([[float(a), float(b)] for a, b in rows[:nv]]).reshape(nv, 2)
    tris = np.array([[int(a), int(b), int(c)] for a, b, c in rows[nv:]], dtype=np.int64)
    return TriMesh(nodes, tris.reshape(nt, 3))
