"""Search planning and execution: panorama segmentation, reasoning-driven local
targets, experience-driven tours, and the frontier coverage fallback.

Mode machine: experienced_tour -> (tour exhausted) -> reasoning -> (no viable
direction, or coverage past threshold) -> coverage_fallback; a found target is
absorbing. Coverage reverts to reasoning when fresh evidence of the target
label appears in the semantic grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .config import SearchConfig
from .experience import TaskProbabilityMap
from .geometry import Pose, wrap_angle
from .gridworld import (
    GroundTruthMap,
    SemanticGrid,
    astar_path,
    astar_to_near,
    distance_matrix,
    line_of_sight,
    path_length,
    region_overlap_ratio,
    sense,
)
from .gridworld.sensing import RayScan, free_cells_along, scan_to_arrays
from .gridworld.worldmap import EIGHT_CONNECTED
from .reasoning import (
    ProposerRequest,
    Proposer,
    RankedPropositions,
    SegmentMeasurements,
    SegmentSummary,
    reason_cycle,
)
from .tour import Tour, TourNode, TourProblem, solve

REASONING = "reasoning"
EXPERIENCED_TOUR = "experienced_tour"
COVERAGE_FALLBACK = "coverage_fallback"

UNREACHABLE_SENTINEL_FACTOR = 10.0


class NoViableDirection(RuntimeError):
    """Every panorama segment was rejected; reasoning cannot move."""


class SearchExhausted(RuntimeError):
    """Coverage is complete (or unreachable) and the target was never seen."""


@dataclass(frozen=True)
class SegmentView:
    """One panorama wedge: geometry, visible semantics, and its scanned cells."""

    index: int
    center_angle: float
    labels: dict[str, int]
    free_depth_m: float
    cells: np.ndarray  # (k, 2) array of (iy, ix)


@dataclass
class PanoramaObservation:
    n: int
    pose: Pose
    segments: list[SegmentView]
    scan: RayScan


@dataclass(frozen=True)
class LocalTarget:
    position: tuple[float, float]
    source_segment: int


@dataclass
class SearchState:
    mode: str
    pose: Pose
    prev_heading: float
    found: bool = False
    found_position: tuple[float, float] | None = None
    found_radius_m: float = 0.0
    tour: Tour | None = None
    tour_targets: list[tuple[float, float]] = field(default_factory=list)
    tour_cursor: int = 0


def build_observation(
    truth: GroundTruthMap,
    grid: SemanticGrid,
    pose: Pose,
    n: int,
    sensor_range_m: float,
    n_rays: int = 96,
) -> PanoramaObservation:
    """Scan and bucket rays into n equal wedges with the robot's heading at the
    center of the middle segment, index (n-1)/2."""
    if n < 3 or n % 2 == 0:
        raise ValueError("segment count must be odd")
    if n_rays < 2 * n:
        raise ValueError("need at least two rays per segment")
    scan = sense(truth, pose, sensor_range_m, n_rays)
    mid = (n - 1) // 2
    width = 2.0 * math.pi / n

    def segment_of(angle: float) -> int:
        rel = wrap_angle(angle - pose.heading)
        return (mid + int(math.floor((rel + width / 2.0) / width))) % n

    ray_segment = [segment_of(r.angle) for r in scan]
    angles, dists, _ = scan_to_arrays(scan)
    f_ray, f_iy, f_ix = free_cells_along(grid.geometry, pose.x, pose.y, angles, dists)
    f_seg = np.array([ray_segment[r] for r in f_ray], dtype=np.int64)

    segments = []
    for i in range(n):
        rays = [scan[k] for k in range(len(scan)) if ray_segment[k] == i]
        depth = min(r.hit_distance_m for r in rays)
        labels: dict[str, int] = {}
        for r in rays:
            if r.hit_label is not None:
                labels[r.hit_label] = labels.get(r.hit_label, 0) + 1
        in_seg = f_seg == i
        cells = np.unique(np.stack([f_iy[in_seg], f_ix[in_seg]], axis=1), axis=0)
        center = wrap_angle(pose.heading + (i - mid) * width)
        segments.append(SegmentView(i, center, labels, float(depth), cells))
    return PanoramaObservation(n, pose, segments, scan)


def observation_measurements(
    obs: PanoramaObservation, grid: SemanticGrid, sensor_range_m: float
) -> list[SegmentMeasurements]:
    """Evaluator inputs per segment: obstacle distance, explored overlap, angle."""
    return [
        SegmentMeasurements(
            seg.free_depth_m,
            region_overlap_ratio(grid.explored, seg.cells, sensor_range_m),
            seg.center_angle,
        )
        for seg in obs.segments
    ]


def _candidate_for_segment(
    seg: SegmentView,
    obs: PanoramaObservation,
    grid: SemanticGrid,
    robot_radius_m: float,
    min_travel_m: float,
    d_safe_m: float,
) -> tuple[float, float] | None:
    """Apply the local-target rules to one segment; None when it fails them.

    The point sits on the wedge's center ray, halfway down the free depth,
    clamped to [min_travel, depth - d_safe]; it must land on a cell that is
    not known-occupied and keeps robot-radius clearance.
    """
    upper = seg.free_depth_m - d_safe_m
    if upper < min_travel_m:
        return None
    dist = min(max(seg.free_depth_m * 0.5, min_travel_m), upper)
    x = obs.pose.x + math.cos(seg.center_angle) * dist
    y = obs.pose.y + math.sin(seg.center_angle) * dist
    if not grid.geometry.contains(x, y):
        return None
    iy, ix = grid.geometry.cell_of(x, y)
    if grid.occupied_mask[iy, ix]:
        return None
    if grid.clearance_m()[iy, ix] < robot_radius_m - 1e-9:
        return None
    return (x, y)


def iter_local_targets(
    ranked: RankedPropositions,
    obs: PanoramaObservation,
    grid: SemanticGrid,
    robot_radius_m: float,
    min_travel_m: float,
    d_safe_m: float,
):
    """Candidates in ranked order, falling through segments that fail the rules."""
    for seg_index in ranked.order:
        candidate = _candidate_for_segment(
            obs.segments[seg_index], obs, grid, robot_radius_m, min_travel_m, d_safe_m
        )
        if candidate is not None:
            yield LocalTarget(candidate, seg_index)


def select_local_target(
    ranked: RankedPropositions,
    obs: PanoramaObservation,
    grid: SemanticGrid,
    robot_radius_m: float,
    min_travel_m: float,
    d_safe_m: float,
) -> LocalTarget:
    """First viable target in ranked order; raises NoViableDirection otherwise."""
    for target in iter_local_targets(ranked, obs, grid, robot_radius_m, min_travel_m, d_safe_m):
        return target
    raise NoViableDirection("no viable direction")


def smooth_path(
    path: list[tuple[float, float]], grid: SemanticGrid, clearance_m: float
) -> list[tuple[float, float]]:
    """Greedy line-of-sight shortcutting; keeps endpoints, never lengthens."""
    if len(path) <= 2:
        return list(path)
    out = [path[0]]
    i = 0
    while i < len(path) - 1:
        j = len(path) - 1
        while j > i + 1 and not line_of_sight(grid, path[i], path[j], clearance_m):
            j -= 1
        out.append(path[j])
        i = j
    return out


def plan_experienced(
    tmap: TaskProbabilityMap,
    grid: SemanticGrid,
    label: str,
    pose: Pose,
    config: SearchConfig,
) -> tuple[Tour, list[tuple[float, float]]]:
    """Tour over remembered find locations (weight-discounted) or, lacking a
    memory layer, over label sightings in the semantic grid (plain lengths).

    Returns the tour plus the node positions it visits in order (robot first).
    An empty tour means the caller should switch to reasoning search.
    """
    layer = tmap.layer(label)
    if layer is not None:
        targets = layer.extract_targets()
        positions = [pos for pos, _ in targets]
        tour_weights = [w for _, w in targets]
        beta = config.beta
    else:
        positions = grid.query_label_locations(label, config.label_belief_threshold)
        tour_weights = [0.0] * len(positions)
        beta = 0.0
    if not positions:
        return Tour((0,), 0.0), [pose.position]

    points = [pose.position] + list(positions)
    dists = distance_matrix(
        grid,
        points,
        clearance_m=config.robot_radius_m,
        unknown_multiplier=config.unknown_cost_multiplier,
    )
    sentinel = UNREACHABLE_SENTINEL_FACTOR * grid.geometry.diagonal_m
    dists = np.where(np.isfinite(dists), dists, sentinel)
    nodes = [TourNode(0, points[0], 0.0)] + [
        TourNode(i + 1, points[i + 1], tour_weights[i]) for i in range(len(positions))
    ]
    tour = solve(TourProblem(nodes, dists, beta=beta))
    ordered = [points[i] for i in tour.order]
    return tour, ordered


def frontier_clusters(grid: SemanticGrid, max_clusters: int = 12) -> list[tuple[float, float]]:
    """Representative points of 8-connected clusters on the boundary between
    space this run has swept and space it has not, largest clusters first when
    there are more than max_clusters.

    The unseen side is anything not sensor-covered in this run that is not
    known-occupied: unknown space, but also stale "known free" areas from a
    previous run's map, which must be re-observed before the target can be
    declared absent (the world may have changed since the map was built).
    Each cluster is reduced to its medoid (the cluster cell nearest the
    centroid): concave frontier arcs have centroids deep inside already-known
    space, which would send the robot nowhere.
    """
    covered = grid.explored.covered
    seen_free = covered & grid.free_mask
    unseen = ~covered & ~grid.occupied_mask
    near_unseen = ndimage.binary_dilation(
        unseen, structure=np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
    )
    frontier = seen_free & near_unseen
    if not frontier.any():
        return []
    comp, n = ndimage.label(frontier, structure=EIGHT_CONNECTED)
    sizes = ndimage.sum_labels(frontier, comp, index=range(1, n + 1))
    order = sorted(range(1, n + 1), key=lambda cid: (-sizes[cid - 1], cid))[:max_clusters]
    cell = grid.geometry.cell_size_m
    out = []
    for cid in order:
        iys, ixs = np.nonzero(comp == cid)
        cy, cx = iys.mean(), ixs.mean()
        k = int(np.lexsort((ixs, iys, (iys - cy) ** 2 + (ixs - cx) ** 2))[0])
        out.append((float((ixs[k] + 0.5) * cell), float((iys[k] + 0.5) * cell)))
    return out


def plan_coverage(
    grid: SemanticGrid, pose: Pose, config: SearchConfig
) -> list[tuple[float, float]]:
    """Frontier centroids in plain-length tour order from the robot."""
    centroids = frontier_clusters(grid)
    if not centroids:
        return []
    points = [pose.position] + centroids
    dists = distance_matrix(
        grid,
        points,
        clearance_m=config.robot_radius_m,
        unknown_multiplier=config.unknown_cost_multiplier,
    )
    sentinel = UNREACHABLE_SENTINEL_FACTOR * grid.geometry.diagonal_m
    dists = np.where(np.isfinite(dists), dists, sentinel)
    nodes = [TourNode(i, p, 0.0) for i, p in enumerate(points)]
    tour = solve(TourProblem(nodes, dists, beta=0.0))
    return [points[i] for i in tour.order[1:]]


class SearchPlanner:
    """Owns one episode's world, grid, proposer, and trace; executes decisions."""

    def __init__(
        self,
        truth: GroundTruthMap,
        grid: SemanticGrid,
        proposer: Proposer,
        target_label: str,
        config: SearchConfig,
        memory: TaskProbabilityMap | None = None,
    ):
        self.truth = truth
        self.grid = grid
        self.proposer = proposer
        self.target_label = target_label
        self.config = config
        self.memory = memory if memory is not None else TaskProbabilityMap()
        self.weights = config.weights
        self.events: list[dict] = []
        self.proposer_calls = 0
        self.path_length_m = 0.0
        self.t = 0
        self.feedback_history: list = []
        self._stall_count = 0
        self._last_covered = 0
        self._evidence_baseline = np.zeros(grid.geometry.shape, dtype=bool)
        self._coverage_skip: set[tuple[float, float]] = set()
        self._coverage_progress_mark = -1
        self._target_objects = truth.objects_with_label(target_label)
        self._target_cells = self._footprint_cells()
        self._reachable_free: np.ndarray | None = None

    # -- bookkeeping -----------------------------------------------------------

    def _footprint_cells(self) -> list[tuple[int, int, int]]:
        """(object index, iy, ix) for every cell of every target object."""
        cells = []
        geo = self.truth.geometry
        for oi, obj in enumerate(self._target_objects):
            r_cells = int(math.ceil(obj.radius_m / geo.cell_size_m)) + 1
            ciy, cix = geo.cell_of(obj.x, obj.y)
            for iy in range(max(0, ciy - r_cells), min(geo.n_rows, ciy + r_cells + 1)):
                for ix in range(max(0, cix - r_cells), min(geo.n_cols, cix + r_cells + 1)):
                    cx, cy = geo.cell_center(iy, ix)
                    if (cx - obj.x) ** 2 + (cy - obj.y) ** 2 <= obj.radius_m**2 or (
                        iy,
                        ix,
                    ) == (ciy, cix):
                        cells.append((oi, iy, ix))
        return cells

    def record(self, kind: str, state: SearchState, **payload) -> None:
        self.events.append(
            {
                "t": self.t,
                "event": kind,
                "pose": [state.pose.x, state.pose.y, state.pose.heading],
                "mode": state.mode,
                "proposer_calls": self.proposer_calls,
                "path_len": self.path_length_m,
                **payload,
            }
        )

    def covered_fraction(self) -> float:
        if self._reachable_free is None:
            return 0.0
        reachable = self._reachable_free
        total = int(reachable.sum())
        if total == 0:
            return 1.0
        return float((self.grid.explored.covered & reachable).sum()) / total

    def start(self, state: SearchState) -> None:
        """Initial observation at the start pose."""
        self._reachable_free = self.truth.reachable_free_mask(state.pose.x, state.pose.y)
        self.grid.explored.mark_visited(*self.grid.geometry.cell_of(state.pose.x, state.pose.y))
        self.sense_and_update(state)
        self.record("start", state, target=self.target_label)

    # -- sensing and detection ---------------------------------------------------

    def sense_and_update(self, state: SearchState, scan: RayScan | None = None) -> None:
        if scan is None:
            scan = sense(self.truth, state.pose, self.config.sensor_range_m, self.config.sensor_rays)
        self.grid.integrate_scan(state.pose, scan)
        self._check_found(state)

    def _check_found(self, state: SearchState) -> None:
        if state.found:
            return
        detect = self.config.detection_range
        geo = self.grid.geometry
        for oi, iy, ix in self._target_cells:
            if not self.grid.observed[iy, ix]:
                continue
            cx, cy = geo.cell_center(iy, ix)
            if state.pose.distance_to((cx, cy)) > detect:
                continue
            label, _ = self.grid.cell_label(iy, ix)
            if label == self.target_label:
                obj = self._target_objects[oi]
                state.found = True
                state.found_position = (obj.x, obj.y)
                state.found_radius_m = obj.radius_m
                self.record("found", state, position=[obj.x, obj.y])
                return

    # -- motion --------------------------------------------------------------------

    def _physically_blocked(self, x: float, y: float) -> bool:
        """True when (x, y) is out of bounds or within the robot radius of a
        true obstacle, whether or not the robot has discovered it yet."""
        geo = self.truth.geometry
        if not geo.contains(x, y):
            return True
        iy, ix = geo.cell_of(x, y)
        if self.truth.occupied[iy, ix]:
            return True
        radius = self.config.robot_radius_m
        r = int(math.ceil((radius + geo.cell_size_m) / geo.cell_size_m))
        for ny in range(max(0, iy - r), min(geo.n_rows, iy + r + 1)):
            for nx in range(max(0, ix - r), min(geo.n_cols, ix + r + 1)):
                if not self.truth.occupied[ny, nx]:
                    continue
                cx, cy = geo.cell_center(ny, nx)
                if math.hypot(cx - x, cy - y) < radius:
                    return True
        return False

    def travel(
        self, state: SearchState, path: list[tuple[float, float]], stop_after_m: float | None = None
    ) -> bool:
        """Advance the robot along a polyline, sensing as it goes.

        Stops early on detection or after stop_after_m of travel. Returns True
        when the end of the path was reached. Emits one move event per polyline
        vertex reached (plus one at an early stop), so summing event-pose
        distances reproduces the traveled length.
        """
        cfg = self.config
        walked = 0.0
        since_sense = 0.0
        for a, b in zip(path[:-1], path[1:]):
            seg_len = math.hypot(b[0] - a[0], b[1] - a[1])
            if seg_len <= 1e-12:
                continue
            heading = math.atan2(b[1] - a[1], b[0] - a[0])
            done = 0.0
            while done < seg_len - 1e-12:
                step = min(cfg.move_step_m, seg_len - done)
                if stop_after_m is not None:
                    step = min(step, stop_after_m - walked)
                x = a[0] + math.cos(heading) * (done + step)
                y = a[1] + math.sin(heading) * (done + step)
                # planned paths may cross unknown space; the physical world
                # still stops the robot short of an undiscovered obstacle
                if self._physically_blocked(x, y):
                    self.sense_and_update(state)
                    self.record("blocked", state)
                    return False
                done += step
                walked += step
                since_sense += step
                state.pose = Pose(x, y, heading)
                self.path_length_m += step
                self.grid.explored.mark_visited(*self.grid.geometry.cell_of(x, y))
                if since_sense >= cfg.sense_interval_m - 1e-12:
                    since_sense = 0.0
                    self.sense_and_update(state)
                    if state.found:
                        self.record("move", state)
                        return False
                if stop_after_m is not None and walked >= stop_after_m - 1e-12:
                    self.sense_and_update(state)
                    self.record("move", state)
                    return False
            self.record("move", state)
        self.sense_and_update(state)
        return True

    # -- decision steps ----------------------------------------------------------------

    def step(self, state: SearchState) -> SearchState:
        """One decision cycle in the current mode."""
        self.t += 1
        if state.found:
            return state
        if state.mode == REASONING:
            self._reasoning_step(state)
        elif state.mode == EXPERIENCED_TOUR:
            self._tour_step(state)
        elif state.mode == COVERAGE_FALLBACK:
            self._coverage_step(state)
        else:
            raise ValueError(f"unknown mode {state.mode!r}")
        return state

    def _reasoning_step(self, state: SearchState) -> None:
        cfg = self.config
        obs = build_observation(
            self.truth, self.grid, state.pose, cfg.segment_count, cfg.sensor_range_m, cfg.sensor_rays
        )
        self.sense_and_update(state, obs.scan)
        if state.found:
            return
        measurements = observation_measurements(obs, self.grid, cfg.sensor_range_m)
        request = ProposerRequest(
            f"find the nearest {self.target_label}",
            [SegmentSummary(s.index, s.labels, s.free_depth_m) for s in obs.segments],
            self.feedback_history,
        )
        result = reason_cycle(self.proposer, request, measurements, state.prev_heading, self.weights)
        self.proposer_calls += result.proposer_calls

        moved = False
        for target in iter_local_targets(
            result.ranked, obs, self.grid, cfg.robot_radius_m, cfg.min_travel_m, cfg.d_safe_m
        ):
            path = self._path_to(state.pose, target.position, exact_goal=True)
            if path is None:
                continue
            self.record(
                "decision",
                state,
                ranked=[int(i) for i in result.ranked.order],
                segment=target.source_segment,
                target=[target.position[0], target.position[1]],
            )
            self.travel(state, path, stop_after_m=cfg.decision_interval_m)
            state.prev_heading = state.pose.heading
            moved = True
            break
        if not moved:
            self._enter_coverage(state, "no viable direction")
            return
        if state.found:
            return
        if self.covered_fraction() >= cfg.coverage_threshold:
            self._enter_coverage(state, "coverage threshold")
            return
        # reasoning that keeps moving without sensing meaningfully new space
        # has stalled in already-covered area; the frontier sweep guarantees
        # progress. Jitter of a couple of cells does not count as progress.
        covered_now = self.grid.explored.covered_count()
        if covered_now - self._last_covered >= 5:
            self._stall_count = 0
        else:
            self._stall_count += 1
            if self._stall_count >= cfg.stall_patience:
                self._stall_count = 0
                self._enter_coverage(state, "stalled")
        self._last_covered = covered_now

    def _enter_coverage(self, state: SearchState, reason: str) -> None:
        """Switch to the frontier sweep, remembering the target evidence known
        now so only genuinely new sightings pull us back to reasoning."""
        state.mode = COVERAGE_FALLBACK
        self._evidence_baseline = self.grid.label_cells(
            self.target_label, self.config.label_belief_threshold
        )
        self.record("fallback", state, reason=reason)

    def _path_to(
        self, pose: Pose, goal: tuple[float, float], exact_goal: bool, arrival_m: float = 0.0
    ) -> list[tuple[float, float]] | None:
        cfg = self.config
        if exact_goal and line_of_sight(self.grid, pose.position, goal, cfg.robot_radius_m):
            return [pose.position, goal]
        if exact_goal:
            raw = astar_path(
                self.grid,
                pose.position,
                goal,
                cfg.robot_radius_m,
                unknown_multiplier=cfg.unknown_cost_multiplier,
            )
        else:
            raw = astar_to_near(
                self.grid,
                pose.position,
                goal,
                cfg.robot_radius_m,
                arrival_m,
                unknown_multiplier=cfg.unknown_cost_multiplier,
            )
        if raw is None:
            return None
        return smooth_path(raw, self.grid, cfg.robot_radius_m)

    def _tour_step(self, state: SearchState) -> None:
        cfg = self.config
        if state.tour is None:
            tour, ordered = plan_experienced(
                self.memory, self.grid, self.target_label, state.pose, cfg
            )
            if len(ordered) <= 1:
                state.mode = REASONING
                self.record("tour_empty", state)
                return
            state.tour = tour
            state.tour_targets = ordered[1:]
            state.tour_cursor = 0
            self.record(
                "tour_planned",
                state,
                cost=tour.cost,
                targets=[[p[0], p[1]] for p in state.tour_targets],
            )
        while state.tour_cursor < len(state.tour_targets):
            goal = state.tour_targets[state.tour_cursor]
            path = self._path_to(state.pose, goal, exact_goal=False, arrival_m=cfg.arrival_tolerance_m)
            if path is None:
                self.record("tour_node_unreachable", state, target=[goal[0], goal[1]])
                state.tour_cursor += 1
                continue
            self.record("tour_leg", state, target=[goal[0], goal[1]])
            arrived = self.travel(state, path)
            if arrived:
                state.tour_cursor += 1
            return
        state.mode = REASONING
        self.record("tour_exhausted", state)

    def _coverage_step(self, state: SearchState) -> None:
        cfg = self.config
        evidence = self.grid.label_cells(self.target_label, cfg.label_belief_threshold)
        if (evidence & ~self._evidence_baseline).any():
            state.mode = REASONING
            self.record("evidence", state, label=self.target_label)
            return
        plan = plan_coverage(self.grid, state.pose, cfg)
        if not plan:
            raise SearchExhausted("search exhausted, target absent")
        # frontiers that produced no motion and no new coverage are skipped
        # until coverage grows again, so the sweep cannot spin in place
        covered_before = self.grid.explored.covered_count()
        if covered_before > self._coverage_progress_mark:
            self._coverage_skip.clear()
            self._coverage_progress_mark = covered_before
        for goal in plan:
            key = (round(goal[0], 3), round(goal[1], 3))
            if key in self._coverage_skip:
                continue
            path = self._path_to(
                state.pose, goal, exact_goal=False, arrival_m=max(1.0, 2 * self.grid.geometry.cell_size_m)
            )
            if path is None:
                self._coverage_skip.add(key)
                continue
            walked_before = self.path_length_m
            self.record("coverage_leg", state, target=[goal[0], goal[1]])
            self.travel(state, path, stop_after_m=cfg.decision_interval_m * 2)
            state.prev_heading = state.pose.heading
            no_motion = self.path_length_m - walked_before < self.grid.geometry.cell_size_m
            no_new = self.grid.explored.covered_count() <= covered_before
            if no_motion and no_new:
                self._coverage_skip.add(key)
            return
        raise SearchExhausted("search exhausted, target absent")
