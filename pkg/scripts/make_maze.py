"""Regenerate the packaged maze raster ``maze128.txt``.

A 10 x 10 room maze is carved by a seeded depth-first search, then one
extra wall is opened to create a loop whose detour is strictly longer than
the direct route, so the shortest source-to-sink route stays unique while
the maze keeps dead ends and an alternative path. Rooms are 8 pixels wide,
walls 4 pixels, with a 2 pixel wall border, giving 128 x 128 pixels; the
nearest-neighbour 64 x 64 resampling keeps every wall and corridor.

Usage: python scripts/make_maze.py [output-path]
"""

import sys
from collections import deque
from pathlib import Path

import numpy as np

ROOMS = 10
ROOM, WALL, PAD = 8, 4, 2
SEED = 7


def carve(rng):
    """Spanning tree of the room grid as a set of opened walls."""
    seen = np.zeros((ROOMS, ROOMS), dtype=bool)
    opened = set()
    stack = [(0, 0)]
    seen[0, 0] = True
    while stack:
        r, c = stack[-1]
        nbrs = [(r + dr, c + dc) for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1))
                if 0 <= r + dr < ROOMS and 0 <= c + dc < ROOMS and not seen[r + dr, c + dc]]
        if not nbrs:
            stack.pop()
            continue
        nxt = nbrs[rng.integers(len(nbrs))]
        seen[nxt] = True
        opened.add(frozenset(((r, c), nxt)))
        stack.append(nxt)
    return opened


def room_distances(opened, start):
    dist = {start: 0}
    queue = deque([start])
    while queue:
        r, c = queue.popleft()
        for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            nb = (r + dr, c + dc)
            if nb not in dist and frozenset(((r, c), nb)) in opened:
                dist[nb] = dist[(r, c)] + 1
                queue.append(nb)
    return dist


def add_detour(opened, rng, source, sink, min_extra=6):
    """Open one wall that creates an alternative route at least ``min_extra`` rooms longer."""
    ds = room_distances(opened, source)
    dt = room_distances(opened, sink)
    best = ds[sink]
    candidates = []
    for r in range(ROOMS):
        for c in range(ROOMS):
            for nb in ((r + 1, c), (r, c + 1)):
                if nb[0] >= ROOMS or nb[1] >= ROOMS or frozenset(((r, c), nb)) in opened:
                    continue
                # route that uses the new door
                alt = min(ds[(r, c)] + 1 + dt[nb], ds[nb] + 1 + dt[(r, c)])
                if alt >= best + min_extra and alt <= best + 3 * min_extra:
                    candidates.append(frozenset(((r, c), nb)))
    candidates.sort(key=lambda e: sorted(e))
    return opened | {candidates[rng.integers(len(candidates))]}


def rasterize(opened, source, sink):
    size = 2 * PAD + ROOMS * ROOM + (ROOMS + 1) * WALL
    grid = np.full((size, size), "#")

    def origin(i):
        return PAD + WALL + i * (ROOM + WALL)

    for r in range(ROOMS):
        for c in range(ROOMS):
            y, x = origin(r), origin(c)
            grid[y:y + ROOM, x:x + ROOM] = "."
    for door in opened:
        (r0, c0), (r1, c1) = sorted(door)
        if r1 == r0 + 1:
            y, x = origin(r0) + ROOM, origin(c0)
            grid[y:y + WALL, x:x + ROOM] = "."
        else:
            y, x = origin(r0), origin(c0) + ROOM
            grid[y:y + ROOM, x:x + WALL] = "."
    for (r, c), mark in ((source, "S"), (sink, "T")):
        y, x = origin(r), origin(c)
        grid[y:y + ROOM, x:x + ROOM] = mark
    return grid


def main(out):
    rng = np.random.default_rng(SEED)
    source, sink = (0, 0), (ROOMS - 1, ROOMS - 1)
    opened = add_detour(carve(rng), rng, source, sink)
    grid = rasterize(opened, source, sink)
    Path(out).write_text("\n".join("".join(row) for row in grid) + "\n")


if __name__ == "__main__":
    default = Path(__file__).resolve().parents[1] / "src" / "physarum" / "data" / "maze128.txt"
    main(sys.argv[1] if len(sys.argv) > 1 else default)
