import math

import numpy as np
import pytest

from goalsearch.config import SearchConfig
from goalsearch.experience import TaskProbabilityMap
from goalsearch.geometry import Pose
from goalsearch.gridworld import GroundTruthMap, SemanticGrid, path_length
from goalsearch.planner import (
    COVERAGE_FALLBACK,
    EXPERIENCED_TOUR,
    REASONING,
    NoViableDirection,
    SearchExhausted,
    SearchPlanner,
    SearchState,
    build_observation,
    frontier_clusters,
    plan_coverage,
    plan_experienced,
    select_local_target,
    smooth_path,
)
from goalsearch.proposers import HeuristicProposer, ScriptedProposer
from goalsearch.reasoning import RankedPropositions
from goalsearch.tour import TourNode, TourProblem, solve_exact

from conftest import bordered_map, fully_observed_grid, sweep_covered
from oracles import enumerate_best_tour


def room(width=20.0, height=20.0, cell=0.5, obstacles=(), objects=()):
    return bordered_map(width, height, cell, obstacles=obstacles, objects=objects, wall=1.0)


class TestBuildObservation:
    def test_eleven_segments_partition_the_circle(self):
        truth = room()
        grid = SemanticGrid(truth.geometry)
        obs = build_observation(truth, grid, Pose(10, 10, 0.7), 11, 6.0, 96)
        assert obs.n == 11
        widths = 2 * math.pi / 11
        for seg in obs.segments:
            assert seg.center_angle == pytest.approx(
                math.remainder(0.7 + (seg.index - 5) * widths, 2 * math.pi), abs=1e-9
            )

    def test_even_segment_count_rejected(self):
        truth = room()
        grid = SemanticGrid(truth.geometry)
        with pytest.raises(ValueError, match="odd"):
            build_observation(truth, grid, Pose(10, 10), 4, 6.0, 96)

    def test_heading_lies_in_middle_segment(self):
        truth = room()
        grid = SemanticGrid(truth.geometry)
        for heading in (0.0, 1.2, -2.5, 3.1):
            obs = build_observation(truth, grid, Pose(10, 10, heading), 3, 6.0, 24)
            # the ray closest to the heading must land in segment 1
            closest = min(obs.scan, key=lambda r: abs(math.remainder(r.angle - heading, 2 * math.pi)))
            seg_widths = 2 * math.pi / 3
            rel = math.remainder(closest.angle - heading, 2 * math.pi)
            assert abs(rel) <= seg_widths / 2 + 1e-9
            # and angle 0 segment for a +x-facing robot is the middle one
        obs = build_observation(truth, grid, Pose(10, 10, 0.0), 3, 6.0, 24)
        mid = obs.segments[1]
        assert abs(mid.center_angle) < 1e-9

    def test_depth_is_min_hit_distance_in_wedge(self):
        truth = room(obstacles=[{"type": "rect", "x": 13.0, "y": 9.5, "width": 1.0, "height": 1.0}])
        grid = SemanticGrid(truth.geometry)
        obs = build_observation(truth, grid, Pose(10, 10, 0.0), 11, 8.0, 96)
        mid = obs.segments[5]
        assert mid.free_depth_m == pytest.approx(3.0, abs=0.5)
        # wedges away from the block see the far wall or max range
        assert obs.segments[0].free_depth_m > mid.free_depth_m

    def test_labels_aggregate_per_wedge(self):
        truth = room(objects=[{"label": "car", "x": 14.0, "y": 10.0, "radius_m": 0.8}])
        grid = SemanticGrid(truth.geometry)
        obs = build_observation(truth, grid, Pose(10, 10, 0.0), 11, 8.0, 96)
        assert obs.segments[5].labels.get("car", 0) > 0
        assert all("car" not in obs.segments[i].labels for i in (0, 1, 9, 10))


class TestSelectLocalTarget:
    def make_obs(self, depths, pose=Pose(10, 10, 0.0)):
        truth = room()
        grid = fully_observed_grid(truth)
        obs = build_observation(truth, grid, pose, 3, 25.0, 24)
        obs.segments = [
            s.__class__(s.index, s.center_angle, s.labels, d, s.cells)
            for s, d in zip(obs.segments, depths)
        ]
        return obs, grid

    def test_halfway_point_in_top_segment(self):
        obs, grid = self.make_obs([20.0, 20.0, 20.0], pose=Pose(4.0, 10.0, 0.0))
        ranked = RankedPropositions((1, 0, 2), (0.0, 1.0, 2.0))
        target = select_local_target(ranked, obs, grid, 0.5, 3.0, 1.0)
        assert target.source_segment == 1
        assert target.position[0] == pytest.approx(4.0 + 10.0, abs=1e-9)
        assert target.position[1] == pytest.approx(10.0, abs=1e-9)

    def test_min_travel_clamps_short_segments(self):
        obs, grid = self.make_obs([20.0, 4.5, 20.0], pose=Pose(10.0, 10.0, 0.0))
        ranked = RankedPropositions((1, 0, 2), (0.0, 1.0, 2.0))
        target = select_local_target(ranked, obs, grid, 0.5, 3.0, 1.0)
        # depth 4.5: half is 2.25 -> clamped up to min_travel 3.0 (<= 4.5 - 1.0)
        assert target.source_segment == 1
        assert math.dist(target.position, (10, 10)) == pytest.approx(3.0, abs=1e-9)

    def test_blocked_top_segment_falls_through(self):
        obs, grid = self.make_obs([20.0, 0.5, 20.0], pose=Pose(10.0, 10.0, 0.0))
        ranked = RankedPropositions((1, 0, 2), (0.0, 1.0, 2.0))
        target = select_local_target(ranked, obs, grid, 0.5, 3.0, 1.0)
        assert target.source_segment == 0

    def test_all_segments_blocked_raises(self):
        obs, grid = self.make_obs([0.5, 0.5, 0.5])
        ranked = RankedPropositions((0, 1, 2), (0.0, 1.0, 2.0))
        with pytest.raises(NoViableDirection, match="no viable direction"):
            select_local_target(ranked, obs, grid, 0.5, 3.0, 1.0)


class TestSmoothPath:
    def test_straight_path_unchanged(self):
        truth = room()
        grid = fully_observed_grid(truth)
        path = [(2.0, 2.0), (5.0, 2.0), (9.0, 2.0)]
        assert smooth_path(path, grid, 0.5) == [(2.0, 2.0), (9.0, 2.0)]

    def test_l_shape_in_open_room_collapses_to_two_points(self):
        truth = room()
        grid = fully_observed_grid(truth)
        path = [(3.0, 3.0), (3.0, 15.0), (15.0, 15.0)]
        smoothed = smooth_path(path, grid, 0.5)
        assert smoothed == [(3.0, 3.0), (15.0, 15.0)]
        assert path_length(smoothed) <= path_length(path)

    def test_hugging_obstacle_keeps_clearance(self):
        truth = room(obstacles=[{"type": "rect", "x": 8.0, "y": 8.0, "width": 4.0, "height": 4.0}])
        grid = fully_observed_grid(truth)
        from goalsearch.gridworld import astar_path

        path = astar_path(grid, (5.0, 5.0), (15.0, 15.0), 0.5)
        assert path is not None
        smoothed = smooth_path(path, grid, 0.5)
        assert path_length(smoothed) <= path_length(path) + 1e-9
        clear = grid.clearance_m()
        for a, b in zip(smoothed[:-1], smoothed[1:]):
            n = max(2, int(math.dist(a, b) / 0.1))
            for t in np.linspace(0, 1, n):
                x, y = a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t
                iy, ix = grid.geometry.cell_of(x, y)
                assert clear[iy, ix] >= 0.5 - 1e-9


class TestPlanExperienced:
    def test_memory_layer_builds_weighted_tour(self):
        truth = room(width=30)
        grid = fully_observed_grid(truth)
        tmap = TaskProbabilityMap()
        tmap.record_find("car", (25.0, 15.0), 1.0)
        tmap.record_find("car", (5.0, 15.0), 1.0)
        cfg = SearchConfig()
        tour, ordered = plan_experienced(tmap, grid, "car", Pose(5.0, 5.0), cfg)
        assert len(ordered) == 3
        assert ordered[0] == (5.0, 5.0)
        assert len(tour.order) == 3

    def test_grid_fallback_uses_label_clusters(self):
        truth = room(width=30)
        grid = fully_observed_grid(truth)
        lid = grid._label_id("car")
        for iy, ix in [(20, 20), (20, 21), (10, 40), (10, 41)]:
            grid.log_odds[iy, ix] = grid.clamp
            grid._label_counts[iy * grid.geometry.n_cols + ix] = {lid: 3}
        grid._occ_version += 1
        tour, ordered = plan_experienced(TaskProbabilityMap(), grid, "car", Pose(5.0, 5.0), SearchConfig())
        assert len(ordered) == 3  # robot + 2 clusters

    def test_empty_memory_and_grid_yields_single_node(self):
        truth = room()
        grid = fully_observed_grid(truth)
        tour, ordered = plan_experienced(TaskProbabilityMap(), grid, "car", Pose(5.0, 5.0), SearchConfig())
        assert tour.order == (0,)
        assert ordered == [(5.0, 5.0)]


class TestCoverage:
    def test_fully_swept_grid_has_no_frontiers(self):
        truth = room()
        grid = fully_observed_grid(truth, swept=True)
        assert frontier_clusters(grid) == []

    def test_single_boundary_produces_one_cluster(self):
        truth = room()
        grid = fully_observed_grid(truth)
        # carve an unknown strip on the east side
        grid.log_odds[:, 30:] = 0.0
        grid.observed[:, 30:] = False
        grid._occ_version += 1
        sweep_covered(grid)
        clusters = frontier_clusters(grid)
        assert len(clusters) == 1
        assert clusters[0][0] == pytest.approx(14.75, abs=0.5)

    def test_stale_known_free_area_is_a_frontier_again(self):
        # a fresh run over a fully persisted map must re-observe everything
        truth = room()
        grid = fully_observed_grid(truth)  # loaded map, nothing covered yet
        grid.explored.covered[2:6, 2:6] = True  # this run has seen one corner
        assert len(frontier_clusters(grid)) >= 1

    def test_four_clusters_visit_order_matches_exact_tour(self):
        truth = room(width=40, height=40)
        grid = fully_observed_grid(truth)
        # four separated unknown pockets
        pockets = [(6, 6), (6, 70), (70, 6), (70, 70)]
        for iy, ix in pockets:
            grid.log_odds[iy : iy + 4, ix : ix + 4] = 0.0
            grid.observed[iy : iy + 4, ix : ix + 4] = False
        grid._occ_version += 1
        sweep_covered(grid)
        cfg = SearchConfig()
        pose = Pose(20.0, 20.0)
        plan = plan_coverage(grid, pose, cfg)
        assert len(plan) == 4

        from goalsearch.gridworld import distance_matrix

        centroids = frontier_clusters(grid)
        pts = [pose.position] + centroids
        dists = distance_matrix(grid, pts, cfg.robot_radius_m)
        best_order, _ = enumerate_best_tour(dists, len(pts))
        expected = [pts[i] for i in best_order[1:]]
        assert plan == expected


def target_room():
    return room(
        width=30,
        height=20,
        objects=[{"label": "car", "x": 25.0, "y": 15.0, "radius_m": 1.0}],
    )


class TestSearchPlanner:
    def test_reasoning_finds_visible_target_immediately(self):
        truth = target_room()
        grid = SemanticGrid(truth.geometry)
        cfg = SearchConfig(sensor_range_m=8.0)
        planner = SearchPlanner(truth, grid, HeuristicProposer("car"), "car", cfg)
        state = SearchState(REASONING, Pose(22.0, 13.0, 0.5), 0.5)
        planner.start(state)
        assert state.found
        assert state.found_position == (25.0, 15.0)

    def test_reasoning_episode_advances_min_travel_per_step(self):
        truth = room(width=40, height=10)
        grid = SemanticGrid(truth.geometry)
        cfg = SearchConfig(sensor_range_m=6.0)
        planner = SearchPlanner(truth, grid, HeuristicProposer("car"), "car", cfg)
        state = SearchState(REASONING, Pose(3.0, 5.0, 0.0), 0.0)
        planner.start(state)
        for _ in range(3):
            before = planner.path_length_m
            planner.step(state)
            if state.mode != REASONING:
                break
            assert planner.path_length_m - before >= cfg.min_travel_m - 1e-9

    def test_compliant_proposer_one_call_per_cycle(self):
        truth = room(width=40, height=30)
        grid = SemanticGrid(truth.geometry)
        cfg = SearchConfig(sensor_range_m=6.0)
        planner = SearchPlanner(truth, grid, HeuristicProposer("car"), "car", cfg)
        state = SearchState(REASONING, Pose(5.0, 5.0, 0.0), 0.0)
        planner.start(state)
        reasoning_steps = 0
        for _ in range(12):
            if state.mode == REASONING and not state.found:
                planner.step(state)
                reasoning_steps += 1
            else:
                break
        assert planner.proposer_calls == reasoning_steps

    def test_tour_mode_visits_memory_and_falls_back_to_reasoning(self):
        truth = room(width=30, height=20)  # no car anywhere
        grid = fully_observed_grid(truth)
        tmap = TaskProbabilityMap()
        tmap.record_find("car", (25.0, 15.0), 1.0)
        cfg = SearchConfig(sensor_range_m=6.0)
        planner = SearchPlanner(truth, grid, HeuristicProposer("car"), "car", cfg, memory=tmap)
        state = SearchState(EXPERIENCED_TOUR, Pose(5.0, 5.0, 0.0), 0.0)
        planner.start(state)
        guard = 0
        while state.mode == EXPERIENCED_TOUR and guard < 20:
            planner.step(state)
            guard += 1
        assert state.mode == REASONING
        kinds = [e["event"] for e in planner.events]
        assert "tour_planned" in kinds and "tour_exhausted" in kinds
        # the robot actually went near the remembered location
        assert min(
            math.dist((e["pose"][0], e["pose"][1]), (25.0, 15.0)) for e in planner.events
        ) <= cfg.arrival_tolerance_m + 0.5

    def test_exhausts_when_target_absent(self):
        truth = room(width=16, height=12)
        grid = SemanticGrid(truth.geometry)
        cfg = SearchConfig(sensor_range_m=6.0, coverage_threshold=0.7)
        planner = SearchPlanner(truth, grid, HeuristicProposer("car"), "car", cfg)
        state = SearchState(REASONING, Pose(4.0, 4.0, 0.0), 0.0)
        planner.start(state)
        with pytest.raises(SearchExhausted, match="search exhausted"):
            for _ in range(200):
                planner.step(state)
        assert not state.found

    def test_mode_transition_chain_recorded(self):
        truth = room(width=24, height=16)
        grid = fully_observed_grid(truth)
        tmap = TaskProbabilityMap()
        tmap.record_find("car", (20.0, 12.0), 1.0)
        cfg = SearchConfig(sensor_range_m=6.0, coverage_threshold=0.7)
        planner = SearchPlanner(truth, grid, HeuristicProposer("car"), "car", cfg, memory=tmap)
        state = SearchState(EXPERIENCED_TOUR, Pose(4.0, 4.0, 0.0), 0.0)
        planner.start(state)
        modes = [state.mode]
        try:
            for _ in range(100):
                planner.step(state)
                if modes[-1] != state.mode:
                    modes.append(state.mode)
        except SearchExhausted:
            pass
        assert modes[0] == EXPERIENCED_TOUR
        assert REASONING in modes
        # fully observed grid: reasoning cannot cover anything new -> fallback
        assert modes[-1] == COVERAGE_FALLBACK

    def test_paths_are_collision_free_at_robot_radius(self):
        truth = room(
            width=30,
            height=20,
            obstacles=[{"type": "rect", "x": 12.0, "y": 6.0, "width": 3.0, "height": 8.0}],
            objects=[{"label": "car", "x": 26.0, "y": 16.0, "radius_m": 1.0}],
        )
        grid = SemanticGrid(truth.geometry)
        cfg = SearchConfig(sensor_range_m=6.0)
        planner = SearchPlanner(truth, grid, HeuristicProposer("car"), "car", cfg)
        state = SearchState(REASONING, Pose(4.0, 4.0, 0.0), 0.0)
        planner.start(state)
        for _ in range(60):
            if state.found:
                break
            planner.step(state)
        assert state.found
        # every visited pose stays clear of true obstacles by the robot radius
        poses = [e["pose"] for e in planner.events if e["event"] == "move"]
        occ_iy, occ_ix = np.nonzero(truth.occupied)
        centers = np.stack(
            [(occ_ix + 0.5) * 0.5, (occ_iy + 0.5) * 0.5], axis=1
        )
        for x, y, _ in poses:
            d = np.min(np.hypot(centers[:, 0] - x, centers[:, 1] - y))
            assert d >= cfg.robot_radius_m - 1e-6
