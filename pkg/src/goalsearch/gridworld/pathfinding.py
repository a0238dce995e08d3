"""Shortest paths over the semantic grid.

Traversability and cost contract (shared by A*, line-of-sight checks, and the
batch distance matrix):
  - a cell is traversable when it is not known-occupied and its clearance to
    the nearest known-occupied cell is >= the requested clearance;
  - moves are 8-connected; a diagonal move additionally requires both adjacent
    orthogonal cells to be traversable (no corner cutting);
  - a step costs its length (cell size, or sqrt(2) * cell size diagonally)
    multiplied by the unknown-space penalty when the destination cell has not
    been confirmed free.
"""

from __future__ import annotations

import heapq
import math

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra as csgraph_dijkstra

from .semantic import SemanticGrid

DEFAULT_UNKNOWN_MULTIPLIER = 1.5

SQRT2 = math.sqrt(2.0)

# (dy, dx, unit length)
_STEPS = (
    (-1, 0, 1.0),
    (1, 0, 1.0),
    (0, -1, 1.0),
    (0, 1, 1.0),
    (-1, -1, SQRT2),
    (-1, 1, SQRT2),
    (1, -1, SQRT2),
    (1, 1, SQRT2),
)


def _masks(
    grid: SemanticGrid, clearance_m: float, unknown_multiplier: float = DEFAULT_UNKNOWN_MULTIPLIER
) -> tuple[np.ndarray, np.ndarray]:
    """(traversable, step cost multiplier per destination cell)."""
    traversable = ~grid.occupied_mask & (grid.clearance_m() >= clearance_m - 1e-9)
    mult = np.where(grid.free_mask, 1.0, unknown_multiplier)
    return traversable, mult


def _octile(ay: int, ax: int, by: int, bx: int, cell: float) -> float:
    dy = abs(ay - by)
    dx = abs(ax - bx)
    return cell * (max(dy, dx) + (SQRT2 - 1.0) * min(dy, dx))


def _search(
    grid: SemanticGrid,
    start_cell: tuple[int, int],
    clearance_m: float,
    goal_cells: set[tuple[int, int]],
    heuristic,
    unknown_multiplier: float,
) -> tuple[list[tuple[int, int]], float] | None:
    traversable, mult = _masks(grid, clearance_m, unknown_multiplier)
    n_rows, n_cols = grid.geometry.shape
    cell = grid.geometry.cell_size_m

    sy, sx = start_cell
    if not traversable[sy, sx]:
        return None

    g = {start_cell: 0.0}
    parent: dict[tuple[int, int], tuple[int, int]] = {}
    heap: list[tuple[float, float, int, int]] = [(heuristic(sy, sx), 0.0, sy, sx)]
    closed: set[tuple[int, int]] = set()
    while heap:
        _, gc, cy, cx = heapq.heappop(heap)
        if (cy, cx) in closed:
            continue
        closed.add((cy, cx))
        if (cy, cx) in goal_cells:
            path = [(cy, cx)]
            while path[-1] in parent:
                path.append(parent[path[-1]])
            path.reverse()
            return path, gc
        for dy, dx, length in _STEPS:
            ny, nx = cy + dy, cx + dx
            if not (0 <= ny < n_rows and 0 <= nx < n_cols):
                continue
            if not traversable[ny, nx]:
                continue
            if dy != 0 and dx != 0 and not (traversable[cy + dy, cx] and traversable[cy, cx + dx]):
                continue
            ng = gc + length * cell * mult[ny, nx]
            if ng < g.get((ny, nx), math.inf) - 1e-12:
                g[(ny, nx)] = ng
                parent[(ny, nx)] = (cy, cx)
                heapq.heappush(heap, (ng + heuristic(ny, nx), ng, ny, nx))
    return None


def astar_path(
    grid: SemanticGrid,
    start: tuple[float, float],
    goal: tuple[float, float],
    clearance_m: float,
    unknown_multiplier: float = DEFAULT_UNKNOWN_MULTIPLIER,
) -> list[tuple[float, float]] | None:
    """Minimum-cost 8-connected path between two world points, or None.

    The returned path starts at `start`, ends at `goal`, and routes through
    cell centers that satisfy the clearance contract. Raises ValueError when
    the start cell is already known-occupied.
    """
    geo = grid.geometry
    if not geo.contains(*start) or not geo.contains(*goal):
        return None
    start_cell = geo.cell_of(*start)
    goal_cell = geo.cell_of(*goal)
    if grid.occupied_mask[start_cell]:
        raise ValueError("start blocked")

    def heuristic(cy: int, cx: int) -> float:
        return _octile(cy, cx, goal_cell[0], goal_cell[1], geo.cell_size_m)

    found = _search(grid, start_cell, clearance_m, {goal_cell}, heuristic, unknown_multiplier)
    if found is None:
        return None
    cells, _ = found
    points = [start]
    points.extend(geo.cell_center(iy, ix) for iy, ix in cells[1:-1])
    points.append(goal)
    return points


def astar_to_near(
    grid: SemanticGrid,
    start: tuple[float, float],
    goal: tuple[float, float],
    clearance_m: float,
    arrival_m: float,
    unknown_multiplier: float = DEFAULT_UNKNOWN_MULTIPLIER,
) -> list[tuple[float, float]] | None:
    """Path to any traversable cell within arrival_m of `goal` (for goals that sit
    on or beside obstacles, e.g. object locations)."""
    geo = grid.geometry
    if not geo.contains(*start):
        return None
    start_cell = geo.cell_of(*start)
    if grid.occupied_mask[start_cell]:
        raise ValueError("start blocked")
    traversable, _ = _masks(grid, clearance_m)
    gx, gy = goal
    cell = geo.cell_size_m
    r_cells = int(math.ceil(arrival_m / cell)) + 1
    giy, gix = (
        min(max(int(gy / cell), 0), geo.n_rows - 1),
        min(max(int(gx / cell), 0), geo.n_cols - 1),
    )
    y0, y1 = max(0, giy - r_cells), min(geo.n_rows, giy + r_cells + 1)
    x0, x1 = max(0, gix - r_cells), min(geo.n_cols, gix + r_cells + 1)
    goals: set[tuple[int, int]] = set()
    for iy in range(y0, y1):
        for ix in range(x0, x1):
            if not traversable[iy, ix]:
                continue
            cx, cy = geo.cell_center(iy, ix)
            if math.hypot(cx - gx, cy - gy) <= arrival_m + 1e-9:
                goals.add((iy, ix))
    if not goals:
        return None

    def heuristic(cy: int, cx: int) -> float:
        gy_c, gx_c = giy, gix
        return max(0.0, _octile(cy, cx, gy_c, gx_c, cell) - arrival_m)

    found = _search(grid, start_cell, clearance_m, goals, heuristic, unknown_multiplier)
    if found is None:
        return None
    cells, _ = found
    points = [start]
    points.extend(geo.cell_center(iy, ix) for iy, ix in cells[1:])
    return points


def path_length(points: list[tuple[float, float]]) -> float:
    return float(
        sum(math.hypot(b[0] - a[0], b[1] - a[1]) for a, b in zip(points[:-1], points[1:]))
    )


def path_cost(
    grid: SemanticGrid,
    points: list[tuple[float, float]],
    unknown_multiplier: float = DEFAULT_UNKNOWN_MULTIPLIER,
) -> float:
    """Search cost of a raw (unsmoothed) A* path, recomputed from its cells."""
    geo = grid.geometry
    cells = []
    for p in points:
        c = geo.cell_of(*p)
        if not cells or cells[-1] != c:
            cells.append(c)
    mult = np.where(grid.free_mask, 1.0, unknown_multiplier)
    total = 0.0
    for (ay, ax), (by, bx) in zip(cells[:-1], cells[1:]):
        length = SQRT2 if (ay != by and ax != bx) else 1.0
        total += length * geo.cell_size_m * mult[by, bx]
    return total


def line_of_sight(
    grid: SemanticGrid,
    a: tuple[float, float],
    b: tuple[float, float],
    clearance_m: float,
) -> bool:
    """True when the straight segment a->b only crosses traversable cells."""
    geo = grid.geometry
    if not geo.contains(*a) or not geo.contains(*b):
        return False
    traversable, _ = _masks(grid, clearance_m)
    dist = math.hypot(b[0] - a[0], b[1] - a[1])
    n = max(2, int(math.ceil(dist / (geo.cell_size_m / 4.0))) + 1)
    ts = np.linspace(0.0, 1.0, n)
    xs = a[0] + (b[0] - a[0]) * ts
    ys = a[1] + (b[1] - a[1]) * ts
    ixs = np.clip((xs / geo.cell_size_m).astype(np.int64), 0, geo.n_cols - 1)
    iys = np.clip((ys / geo.cell_size_m).astype(np.int64), 0, geo.n_rows - 1)
    return bool(traversable[iys, ixs].all())


def distance_matrix(
    grid: SemanticGrid,
    points: list[tuple[float, float]],
    clearance_m: float,
    snap_m: float = 3.0,
    unknown_multiplier: float = DEFAULT_UNKNOWN_MULTIPLIER,
) -> np.ndarray:
    """All-pairs shortest-path costs between world points under the same cost
    model as astar_path. Unreachable pairs are +inf. Points on blocked cells
    are snapped to the nearest traversable cell within snap_m."""
    geo = grid.geometry
    traversable, mult = _masks(grid, clearance_m, unknown_multiplier)
    n_rows, n_cols = geo.shape
    cell = geo.cell_size_m

    rows, cols, weights = [], [], []
    for dy, dx, length in _STEPS:
        # clip the shifted overlap region
        ys = slice(max(0, -dy), n_rows - max(0, dy))
        yd = slice(max(0, dy), n_rows + min(0, dy))
        xs = slice(max(0, -dx), n_cols - max(0, dx))
        xd = slice(max(0, dx), n_cols + min(0, dx))
        ok = np.zeros_like(traversable)
        ok[ys, xs] = traversable[ys, xs] & traversable[yd, xd]
        if dy != 0 and dx != 0:
            orth1 = np.zeros_like(traversable)
            orth2 = np.zeros_like(traversable)
            y2 = slice(max(0, dy), n_rows + min(0, dy))
            x2 = slice(max(0, dx), n_cols + min(0, dx))
            orth1[ys, xs] = traversable[y2, xs]
            orth2[ys, xs] = traversable[ys, x2]
            ok &= orth1 & orth2
        sy, sx = np.nonzero(ok)
        ty, tx = sy + dy, sx + dx
        rows.append(sy * n_cols + sx)
        cols.append(ty * n_cols + tx)
        weights.append(length * cell * mult[ty, tx])

    n = n_rows * n_cols
    graph = csr_matrix(
        (np.concatenate(weights), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )

    def snap(p: tuple[float, float]) -> int | None:
        if not geo.contains(*p):
            return None
        iy, ix = geo.cell_of(*p)
        if traversable[iy, ix]:
            return iy * n_cols + ix
        r = int(math.ceil(snap_m / cell))
        best = None
        for dy in range(-r, r + 1):
            for dx in range(-r, r + 1):
                ny, nx = iy + dy, ix + dx
                if 0 <= ny < n_rows and 0 <= nx < n_cols and traversable[ny, nx]:
                    d = math.hypot(dy, dx)
                    if d * cell <= snap_m and (best is None or d < best[0]):
                        best = (d, ny * n_cols + nx)
        return best[1] if best else None

    indices = [snap(p) for p in points]
    k = len(points)
    out = np.full((k, k), np.inf)
    np.fill_diagonal(out, 0.0)
    valid = [i for i, idx in enumerate(indices) if idx is not None]
    if valid:
        dist = csgraph_dijkstra(graph, directed=True, indices=[indices[i] for i in valid])
        for a_pos, i in enumerate(valid):
            for j in valid:
                out[i, j] = dist[a_pos, indices[j]]
        np.fill_diagonal(out, 0.0)
    return out
