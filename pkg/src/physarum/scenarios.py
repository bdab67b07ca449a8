"""Experiment setups: the maze and the circle-to-ellipse transport cases.

Region membership (source, sink, central ellipse, maze walls) is decided
by the centroid of each coarse cell.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .dynamics import DEFAULT_TAU, StepSchedule
from .errors import ContractError, ResolutionTooCoarseError
from .fem import MU_FLOOR
from .mesh import MeshPair, refine_uniform, structured_rect_mesh

__all__ = [
    "Scenario",
    "GridMask",
    "OTGeometry",
    "balance_source",
    "maze_scenario",
    "ot_scenario",
    "initial_density",
    "load_mask",
    "WALL_K",
    "MAZE_SCHEDULE",
    "OT_SCHEDULE",
]

WALL_K = 1000.0
MAZE_SCHEDULE = StepSchedule(dt0=1e-2, growth=1.01, dt_cap=0.5)
OT_SCHEDULE = StepSchedule(dt0=1e-2, growth=1.01, dt_cap=0.25)
BALANCE_TOL = 1e-12

WALL, PATH, SOURCE, SINK = "#", ".", "S", "T"


@dataclass(frozen=True, eq=False)
class Scenario:
    name: str
    pair: MeshPair
    k: np.ndarray
    f: np.ndarray
    mu0: np.ndarray
    schedule: StepSchedule
    tau: float = DEFAULT_TAU
    regions: dict = field(default_factory=dict)

    def __post_init__(self):
        areas = self.pair.coarse.areas
        scale = np.abs(self.f) @ areas
        if abs(self.f @ areas) > BALANCE_TOL * scale:
            raise ContractError(f"{self.name}: source not balanced", module="scenarios")
        if not np.all(self.k > 0):
            raise ContractError(f"{self.name}: resistance must be positive", module="scenarios")
        if np.any(self.mu0 < MU_FLOOR):
            raise ContractError(f"{self.name}: initial density below floor", module="scenarios")


def balance_source(f, areas):
    """Rescale the negative part of ``f`` so that ``sum f * areas == 0``."""
    f = np.array(f, dtype=float)
    areas = np.asarray(areas, dtype=float)
    pos = f > 0
    neg = f < 0
    if not (pos.any() and neg.any()):
        raise ContractError("source must have both positive and negative parts", module="scenarios")
    plus = f[pos] @ areas[pos]
    minus = -(f[neg] @ areas[neg])
    f[neg] *= plus / minus
    return f


# --- maze -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GridMask:
    """Raster of ``#`` wall, ``.`` path, ``S`` source and ``T`` sink cells.

    Row 0 is the top of the domain.
    """

    cells: np.ndarray

    def __post_init__(self):
        cells = np.asarray(self.cells, dtype="<U1")
        if cells.ndim != 2 or cells.size == 0:
            raise ContractError("mask must be a non-empty 2D raster", module="scenarios")
        unknown = set(np.unique(cells)) - {WALL, PATH, SOURCE, SINK}
        if unknown:
            raise ContractError(f"mask contains unknown symbols {sorted(unknown)}", module="scenarios")
        object.__setattr__(self, "cells", cells)

    @classmethod
    def from_text(cls, text):
        rows = [line.rstrip("\n") for line in text.splitlines() if line.strip()]
        if len({len(r) for r in rows}) != 1:
            raise ContractError("mask rows have different lengths", module="scenarios")
        return cls(np.array([list(r) for r in rows]))

    def to_text(self):
        return "\n".join("".join(row) for row in self.cells) + "\n"

    @property
    def shape(self):
        return self.cells.shape

    @property
    def walls(self):
        return self.cells == WALL

    def resample(self, ny, nx=None):
        """Nearest-neighbour resampling to ``ny`` rows and ``nx`` columns."""
        nx = ny if nx is None else nx
        rows, cols = self.shape
        ri = ((np.arange(ny) + 0.5) * rows / ny).astype(int)
        ci = ((np.arange(nx) + 0.5) * cols / nx).astype(int)
        return GridMask(self.cells[np.ix_(ri, ci)])


def load_mask(name="maze128.txt"):
    """Read a mask from the packaged data directory, or from a path."""
    path = Path(name)
    if path.exists():
        return GridMask.from_text(path.read_text())
    return GridMask.from_text(resources.files("physarum.data").joinpath(name).read_text())


def maze_scenario(mask, resolution=None, schedule=MAZE_SCHEDULE, tau=DEFAULT_TAU):
    """Maze on the unit square: ``k = 1000`` on walls, ``1`` elsewhere.

    The mask is resampled to ``resolution`` cells per side when that differs
    from its own size; each raster cell becomes the two triangles of the
    matching grid cell.
    """
    if resolution is not None and mask.shape != (resolution, resolution):
        mask = mask.resample(resolution)
    ny, nx = mask.shape
    coarse = structured_rect_mesh(nx, ny)
    pair = refine_uniform(coarse)
    # triangle 2*(j*nx+i)+{0,1} lies in grid cell (i, j), j counted from the bottom
    cell_of_row = np.flipud(mask.cells).ravel()
    per_tri = np.repeat(cell_of_row, 2)
    walls = per_tri == WALL
    src = per_tri == SOURCE
    snk = per_tri == SINK
    if not (src.any() and snk.any()):
        raise ContractError("mask needs both a source (S) and a sink (T) region", module="scenarios")
    k = np.where(walls, WALL_K, 1.0)
    mu0 = np.where(walls, MU_FLOOR, 1.0)
    f = balance_source(src.astype(float) - snk.astype(float), coarse.areas)
    return Scenario(
        name=f"maze-{nx}x{ny}",
        pair=pair,
        k=k,
        f=f,
        mu0=mu0,
        schedule=schedule,
        tau=tau,
        regions={"wall": walls, "source": src, "sink": snk, "mask": mask},
    )


# --- optimal transport ----------------------------------------------------


@dataclass(frozen=True)
class OTGeometry:
    """Forcing and obstacle shapes on the unit square."""

    source_center: tuple = (0.2, 0.5)
    source_radius: float = 0.1
    sink_center: tuple = (0.7, 0.5)
    sink_semi_axes: tuple = (0.1, 0.2)
    obstacle_center: tuple = (0.45, 0.5)
    obstacle_semi_axes: tuple = (0.25, 0.08)
    obstacle_angle_deg: float = 45.0


def _in_ellipse(points, center, semi_axes, angle_deg=0.0):
    th = math.radians(angle_deg)
    d = points - np.asarray(center)
    c, s = math.cos(th), math.sin(th)
    x = c * d[:, 0] + s * d[:, 1]
    y = -s * d[:, 0] + c * d[:, 1]
    return (x / semi_axes[0]) ** 2 + (y / semi_axes[1]) ** 2 <= 1.0


INITIAL_CONDITIONS = ("uniform", "radial", "sinusoidal")


def initial_density(ic, points):
    """Initial density evaluated at ``points`` (normally cell centroids)."""
    x, y = points[:, 0], points[:, 1]
    if ic == "uniform":
        return np.ones(len(points))
    if ic == "radial":
        return 0.1 + 4.0 * ((x - 0.5) ** 2 + (y - 0.5) ** 2)
    if ic == "sinusoidal":
        return 3.0 + 2.0 * np.sin(8 * np.pi * x) * np.sin(8 * np.pi * y)
    raise ContractError(f"unknown initial condition {ic!r}; expected one of {INITIAL_CONDITIONS}", module="scenarios")


def ot_scenario(kind="homogeneous", pair=None, ic="uniform", geometry=OTGeometry(),
                schedule=OT_SCHEDULE, tau=DEFAULT_TAU, resolution=64):
    """Transport from a disc source to an elliptic sink on the unit square.

    ``kind`` is ``"homogeneous"`` (``k = 1`` everywhere) or a positive number
    ``k_e`` used inside the central oblique ellipse. Without ``pair`` a
    structured ``resolution`` x ``resolution`` mesh and its refinement are used.
    """
    if pair is None:
        pair = refine_uniform(structured_rect_mesh(resolution, resolution))
    centroids = pair.coarse.centroids
    src = _in_ellipse(centroids, geometry.source_center, (geometry.source_radius,) * 2)
    snk = _in_ellipse(centroids, geometry.sink_center, geometry.sink_semi_axes)
    if not src.any() or not snk.any():
        raise ResolutionTooCoarseError("no cell centroid falls inside the source or sink region")
    obstacle = _in_ellipse(
        centroids, geometry.obstacle_center, geometry.obstacle_semi_axes, geometry.obstacle_angle_deg
    )
    k = np.ones(pair.coarse.n_triangles)
    if kind == "homogeneous":
        name = "ot-homogeneous"
    else:
        try:
            k_e = float(kind)
        except (TypeError, ValueError):
            raise ContractError(f"kind must be 'homogeneous' or a number, got {kind!r}", module="scenarios")
        if not k_e > 0:
            raise ContractError(f"k_e must be positive, got {k_e}", module="scenarios")
        if not obstacle.any():
            raise ResolutionTooCoarseError("no cell centroid falls inside the central ellipse")
        k[obstacle] = k_e
        name = f"ot-ke{k_e:g}"
    f = balance_source(src.astype(float) - snk.astype(float), pair.coarse.areas)
    mu0 = initial_density(ic, centroids)
    return Scenario(
        name=f"{name}-{ic}",
        pair=pair,
        k=k,
        f=f,
        mu0=mu0,
        schedule=schedule,
        tau=tau,
        regions={"source": src, "sink": snk, "obstacle": obstacle},
    )
