import math

import numpy as np
import pytest

from goalsearch.gridworld import (
    GridGeometry,
    SemanticGrid,
    astar_path,
    astar_to_near,
    distance_matrix,
    line_of_sight,
    path_cost,
    path_length,
)

from oracles import dijkstra_grid_cost


def grid_from_arrays(occupied, cell=0.5, unknown=None):
    """Semantic grid with prescribed occupied / free / unknown cells."""
    n_rows, n_cols = occupied.shape
    geo = GridGeometry(n_cols * cell, n_rows * cell, cell)
    grid = SemanticGrid(geo)
    grid.log_odds = np.where(occupied, grid.clamp, -grid.clamp)
    if unknown is not None:
        grid.log_odds[unknown] = 0.0
    grid.observed = ~grid.unknown_mask
    grid._occ_version += 1
    return grid


def oracle_inputs(grid, clearance_m):
    traversable = ~grid.occupied_mask & (grid.clearance_m() >= clearance_m - 1e-9)
    mult = np.where(grid.free_mask, 1.0, 1.5)
    return traversable, mult


def random_grid(rng, size=20, p_occ=0.2, p_unknown=0.0):
    occ = rng.random((size, size)) < p_occ
    occ[0, 0] = occ[-1, -1] = False
    unknown = rng.random((size, size)) < p_unknown
    unknown &= ~occ
    return grid_from_arrays(occ, unknown=unknown)


class TestAstar:
    def test_straight_corridor_length(self):
        occ = np.zeros((5, 15), dtype=bool)
        grid = grid_from_arrays(occ, cell=0.5)
        start = grid.geometry.cell_center(2, 1)
        goal = grid.geometry.cell_center(2, 11)
        path = astar_path(grid, start, goal, clearance_m=0.0)
        assert path is not None
        assert path_length(path) == pytest.approx(10 * 0.5)

    def test_walled_off_goal_is_unreachable(self):
        occ = np.zeros((9, 9), dtype=bool)
        occ[3:6, 3:6] = True
        occ[4, 4] = False
        grid = grid_from_arrays(occ)
        path = astar_path(grid, grid.geometry.cell_center(0, 0), grid.geometry.cell_center(4, 4), 0.0)
        assert path is None

    def test_start_on_occupied_cell_raises(self):
        occ = np.zeros((5, 5), dtype=bool)
        occ[2, 2] = True
        grid = grid_from_arrays(occ)
        with pytest.raises(ValueError, match="start blocked"):
            astar_path(grid, grid.geometry.cell_center(2, 2), grid.geometry.cell_center(0, 0), 0.0)

    @pytest.mark.parametrize("seed", range(12))
    def test_random_maze_cost_matches_dijkstra_oracle(self, seed):
        rng = np.random.default_rng(seed)
        grid = random_grid(rng, size=20, p_occ=0.25, p_unknown=0.15)
        start = grid.geometry.cell_center(0, 0)
        goal = grid.geometry.cell_center(19, 19)
        path = astar_path(grid, start, goal, clearance_m=0.0)
        traversable, mult = oracle_inputs(grid, 0.0)
        expected = dijkstra_grid_cost(traversable, mult, 0.5, (0, 0), (19, 19))
        if path is None:
            assert expected is None
        else:
            assert expected is not None
            assert path_cost(grid, path) == pytest.approx(expected, abs=1e-9)

    @pytest.mark.parametrize("seed", range(6))
    def test_clearance_respected_at_every_waypoint(self, seed):
        rng = np.random.default_rng(100 + seed)
        grid = random_grid(rng, size=24, p_occ=0.12)
        clearance = 0.7
        start = grid.geometry.cell_center(0, 0)
        goal = grid.geometry.cell_center(23, 23)
        if grid.clearance_m()[0, 0] < clearance or grid.clearance_m()[23, 23] < clearance:
            pytest.skip("endpoints too close to walls for this seed")
        path = astar_path(grid, start, goal, clearance_m=clearance)
        if path is None:
            return
        clear = grid.clearance_m()
        for x, y in path:
            iy, ix = grid.geometry.cell_of(x, y)
            assert clear[iy, ix] >= clearance - 1e-9

    def test_unknown_cells_cost_extra(self):
        occ = np.zeros((3, 11), dtype=bool)
        unknown = np.zeros((3, 11), dtype=bool)
        unknown[:, 4:7] = True
        grid = grid_from_arrays(occ, cell=1.0, unknown=unknown)
        start = grid.geometry.cell_center(1, 0)
        goal = grid.geometry.cell_center(1, 10)
        path = astar_path(grid, start, goal, 0.0)
        assert path is not None
        # 7 free steps at 1.0 plus 3 unknown steps at 1.5
        assert path_cost(grid, path) == pytest.approx(7 + 3 * 1.5)

    def test_path_endpoints_are_exact(self):
        occ = np.zeros((8, 8), dtype=bool)
        grid = grid_from_arrays(occ)
        start, goal = (0.6, 0.7), (3.1, 2.9)
        path = astar_path(grid, start, goal, 0.0)
        assert path[0] == start
        assert path[-1] == goal


class TestAstarToNear:
    def test_reaches_cell_near_blocked_goal(self):
        occ = np.zeros((11, 11), dtype=bool)
        occ[5, 5] = True
        grid = grid_from_arrays(occ)
        start = grid.geometry.cell_center(0, 0)
        goal = grid.geometry.cell_center(5, 5)
        path = astar_to_near(grid, start, goal, clearance_m=0.0, arrival_m=1.0)
        assert path is not None
        assert math.dist(path[-1], goal) <= 1.0 + 1e-9

    def test_unreachable_when_no_cell_within_radius(self):
        occ = np.zeros((11, 11), dtype=bool)
        occ[3:8, 3:8] = True
        grid = grid_from_arrays(occ)
        path = astar_to_near(
            grid, grid.geometry.cell_center(0, 0), grid.geometry.cell_center(5, 5), 0.0, 0.6
        )
        assert path is None


class TestLineOfSight:
    def test_clear_line(self):
        grid = grid_from_arrays(np.zeros((10, 10), dtype=bool))
        assert line_of_sight(grid, (0.5, 0.5), (4.5, 3.5), 0.0)

    def test_blocked_line(self):
        occ = np.zeros((10, 10), dtype=bool)
        occ[4, :] = True
        grid = grid_from_arrays(occ)
        assert not line_of_sight(grid, (0.5, 0.5), (0.5, 4.5), 0.0)


class TestDistanceMatrix:
    @pytest.mark.parametrize("seed", range(4))
    def test_matches_astar_costs(self, seed):
        rng = np.random.default_rng(7 + seed)
        grid = random_grid(rng, size=16, p_occ=0.18, p_unknown=0.1)
        points = [
            grid.geometry.cell_center(0, 0),
            grid.geometry.cell_center(15, 15),
            grid.geometry.cell_center(2, 13),
        ]
        mat = distance_matrix(grid, points, clearance_m=0.0)
        for i in range(3):
            for j in range(3):
                if i == j:
                    continue
                try:
                    path = astar_path(grid, points[i], points[j], 0.0)
                except ValueError:
                    continue
                if path is None:
                    assert math.isinf(mat[i, j])
                else:
                    assert mat[i, j] == pytest.approx(path_cost(grid, path), abs=1e-9)

    def test_blocked_point_snaps_to_nearby_cell(self):
        occ = np.zeros((11, 11), dtype=bool)
        occ[5, 5] = True
        grid = grid_from_arrays(occ)
        points = [grid.geometry.cell_center(0, 0), grid.geometry.cell_center(5, 5)]
        mat = distance_matrix(grid, points, clearance_m=0.0)
        assert np.isfinite(mat[0, 1])
