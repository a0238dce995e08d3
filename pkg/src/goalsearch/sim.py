"""Scenario-driven episode runner, batch metrics, and the proposer-alignment
convergence harness."""

from __future__ import annotations

import csv
import json
import math
import statistics
from dataclasses import dataclass, field
from pathlib import Path

from .config import SearchConfig
from .experience import TaskProbabilityMap
from .geometry import Pose
from .gridworld import GroundTruthMap, SemanticGrid
from .planner import (
    COVERAGE_FALLBACK,
    EXPERIENCED_TOUR,
    REASONING,
    SearchExhausted,
    SearchPlanner,
    SearchState,
)
from .proposers import HeuristicProposer, ReplayProposer, RemoteProposer, ScriptedProposer
from .reasoning import (
    ADVISORY_RANKING,
    FeedbackRecord,
    MandatoryCriteriaError,
    MandatoryViolation,
    ProposerRequest,
    SegmentMeasurements,
    SegmentSummary,
    advisory_message,
    parse_proposal,
    proposal_similarity,
    score_and_rank,
)

OUTCOME_FOUND = "found"
OUTCOME_EXHAUSTED = "exhausted"
OUTCOME_ERROR = "error"

METRICS_HEADER = ["kind", "seed", "path_length_m", "steps", "proposer_calls", "outcome"]

GRID_SNAPSHOT = "grid.json"
TASKMAP_SNAPSHOT = "taskmap.json"


@dataclass
class EpisodeMemory:
    """Paths of the persisted cross-episode state (semantic grid + task map)."""

    grid_path: Path
    taskmap_path: Path

    @classmethod
    def in_dir(cls, directory: str | Path) -> "EpisodeMemory":
        d = Path(directory)
        return cls(d / GRID_SNAPSHOT, d / TASKMAP_SNAPSHOT)

    def exists(self) -> bool:
        return self.grid_path.exists() and self.taskmap_path.exists()

    def load_grid(self) -> SemanticGrid:
        return SemanticGrid.load(self.grid_path)

    def load_taskmap(self) -> TaskProbabilityMap:
        return TaskProbabilityMap.load(self.taskmap_path)


@dataclass
class SearchTrace:
    events: list[dict]
    totals: dict

    def write(self, path: str | Path) -> None:
        """JSON-lines: one event per line, then one totals record."""
        with open(path, "w", encoding="utf-8") as fh:
            for event in self.events:
                fh.write(json.dumps(event, sort_keys=True) + "\n")
            fh.write(json.dumps({"totals": self.totals}, sort_keys=True) + "\n")


@dataclass
class EpisodeResult:
    trace: SearchTrace
    memory: EpisodeMemory
    taskmap: TaskProbabilityMap
    error: str | None = None


def build_proposer(config: SearchConfig, target_label: str):
    if config.proposer_backend == "scripted":
        if config.replay_fixture:
            return ReplayProposer(config.replay_fixture)
        if not config.scripted_responses:
            raise ValueError("scripted backend needs scripted_responses or replay_fixture")
        return ScriptedProposer(config.scripted_responses)
    if config.proposer_backend == "heuristic":
        return HeuristicProposer(
            target_label,
            blend=config.proposer_blend,
            mandatory_flubs=config.proposer_mandatory_flubs,
            label_affinity=config.label_affinity,
        )
    return RemoteProposer(
        config.proposer_endpoint,
        model=config.proposer_model,
        api_key_env=config.api_key_env,
        timeout_s=config.proposer_timeout_s,
    )


def run_episode(
    scenario,
    memory: EpisodeMemory | None = None,
    config: SearchConfig | None = None,
    out_dir: str | Path = ".",
    proposer=None,
    base_dir: Path | None = None,
) -> EpisodeResult:
    """Run one episode and persist the updated memory into out_dir.

    first_time episodes ignore any provided memory and map from scratch;
    experienced kinds require one and start in tour mode over it. A successful
    find is recorded into the task map at the object's true position and the
    memory snapshots are rewritten.
    """
    config = (config or SearchConfig()).patched(scenario.overrides)
    truth = scenario.validate(base_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if scenario.episode_kind == "first_time":
        grid = SemanticGrid(
            truth.geometry,
            occ_delta=config.occ_delta,
            free_delta=config.free_delta,
            clamp=config.log_odds_clamp,
        )
        taskmap = TaskProbabilityMap()
        mode = REASONING
    else:
        if memory is None or not memory.exists():
            raise ValueError("memory required for experienced episodes")
        grid = memory.load_grid()
        if grid.geometry != truth.geometry:
            raise ValueError("memory grid geometry does not match the scenario map")
        grid.reset_explored()
        taskmap = memory.load_taskmap()
        mode = EXPERIENCED_TOUR

    if proposer is None:
        proposer = build_proposer(config, scenario.target_label)
    planner = SearchPlanner(truth, grid, proposer, scenario.target_label, config, memory=taskmap)
    state = SearchState(mode, scenario.robot_start, scenario.robot_start.heading)
    planner.start(state)

    max_path = (
        config.max_path_length_m
        if config.max_path_length_m is not None
        else 12.0 * (truth.geometry.width_m + truth.geometry.height_m)
    )
    outcome = OUTCOME_EXHAUSTED
    error_msg = None
    try:
        while not state.found:
            if planner.t >= config.max_decision_steps or planner.path_length_m >= max_path:
                break
            planner.step(state)
        if state.found:
            outcome = OUTCOME_FOUND
    except SearchExhausted:
        outcome = OUTCOME_EXHAUSTED
    except MandatoryCriteriaError as exc:
        outcome = OUTCOME_ERROR
        error_msg = str(exc)

    if outcome == OUTCOME_FOUND and state.found_position is not None:
        taskmap.record_find(
            scenario.target_label,
            state.found_position,
            max(state.found_radius_m, 1e-6),
            size_scale=config.component_size_scale,
        )
        taskmap.layers[scenario.target_label].decay_and_normalize(config.drop_eps)

    new_memory = EpisodeMemory.in_dir(out_dir)
    grid.save(new_memory.grid_path)
    taskmap.save(new_memory.taskmap_path)

    totals = {
        "path_length_m": planner.path_length_m,
        "steps": planner.t,
        "proposer_calls": planner.proposer_calls,
        "outcome": outcome,
        "sim_time_s": planner.path_length_m / config.speed_mps,
    }
    if error_msg:
        totals["error"] = error_msg
    trace = SearchTrace(planner.events, totals)
    return EpisodeResult(trace, new_memory, taskmap, error_msg)


@dataclass
class MetricsTable:
    rows: list[dict]
    aggregates: list[dict]

    def write(self, out_dir: str | Path) -> tuple[Path, Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        rows_path = out_dir / "metrics.csv"
        with open(rows_path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=METRICS_HEADER)
            writer.writeheader()
            writer.writerows(self.rows)
        agg_csv = out_dir / "aggregates.csv"
        agg_fields = ["kind", "episodes", "path_length_mean", "path_length_std", "steps_mean", "steps_std"]
        with open(agg_csv, "w", encoding="utf-8", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=agg_fields)
            writer.writeheader()
            writer.writerows(self.aggregates)
        agg_json = out_dir / "aggregates.json"
        with open(agg_json, "w", encoding="utf-8") as fh:
            json.dump(self.aggregates, fh, indent=2, sort_keys=True)
        return rows_path, agg_csv, agg_json


def _aggregate(rows: list[dict]) -> list[dict]:
    by_kind: dict[str, list[dict]] = {}
    for row in rows:
        by_kind.setdefault(row["kind"], []).append(row)
    out = []
    for kind in sorted(by_kind):
        group = by_kind[kind]
        lengths = [r["path_length_m"] for r in group]
        steps = [r["steps"] for r in group]
        out.append(
            {
                "kind": kind,
                "episodes": len(group),
                "path_length_mean": statistics.fmean(lengths),
                "path_length_std": statistics.pstdev(lengths),
                "steps_mean": statistics.fmean(steps),
                "steps_std": statistics.pstdev(steps),
            }
        )
    return out


def _run_batch_entry(task: tuple) -> dict:
    """One batch episode; failures become error rows so the batch keeps going."""
    scenario, memory_dir, episode_dir, config, base_dir = task
    try:
        memory = EpisodeMemory.in_dir(memory_dir) if memory_dir else None
        result = run_episode(
            scenario, memory=memory, config=config, out_dir=episode_dir, base_dir=base_dir
        )
        totals = result.trace.totals
        result.trace.write(Path(episode_dir) / "trace.jsonl")
        return {
            "kind": scenario.episode_kind,
            "seed": scenario.seed,
            "path_length_m": totals["path_length_m"],
            "steps": totals["steps"],
            "proposer_calls": totals["proposer_calls"],
            "outcome": totals["outcome"],
        }
    except Exception as exc:  # noqa: BLE001 - batch must keep going
        return {
            "kind": scenario.episode_kind,
            "seed": scenario.seed,
            "path_length_m": 0.0,
            "steps": 0,
            "proposer_calls": 0,
            "outcome": f"{OUTCOME_ERROR}: {exc}",
        }


def run_batch(
    entries: list[tuple],
    repetitions: int = 1,
    out_dir: str | Path = "batch_out",
    config: SearchConfig | None = None,
    base_dir: Path | None = None,
    jobs: int = 1,
) -> MetricsTable:
    """Run scenarios (each optionally with a memory directory) and aggregate.

    entries is a list of (scenario, memory_dir_or_None). Rows come back in
    manifest order regardless of jobs, so reruns produce identical CSV bytes.
    """
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    out_dir = Path(out_dir)
    tasks = []
    for idx, (scenario, memory_dir) in enumerate(entries):
        for rep in range(repetitions):
            episode_dir = out_dir / f"episode_{idx:03d}_{rep:02d}"
            tasks.append((scenario, memory_dir, episode_dir, config, base_dir))
    if jobs > 1:
        import concurrent.futures

        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_run_batch_entry, tasks))
    else:
        rows = [_run_batch_entry(task) for task in tasks]
    table = MetricsTable(
        rows, _aggregate([r for r in rows if not str(r["outcome"]).startswith(OUTCOME_ERROR)])
    )
    table.write(out_dir)
    return table


# -- convergence harness ---------------------------------------------------------


@dataclass
class ConvergencePoint:
    iteration: int
    valid: bool
    similarity: float
    kind: str


@dataclass
class ConvergenceCurve:
    points: list[ConvergencePoint]

    @property
    def first_valid_iteration(self) -> int | None:
        for p in self.points:
            if p.valid:
                return p.iteration
        return None

    @property
    def initial_similarity(self) -> float | None:
        for p in self.points:
            if p.valid:
                return p.similarity
        return None

    @property
    def final_similarity(self) -> float | None:
        valid = [p for p in self.points if p.valid]
        return valid[-1].similarity if valid else None

    def summary(self) -> dict:
        return {
            "iterations": len(self.points),
            "first_valid_iteration": self.first_valid_iteration,
            "initial_similarity": self.initial_similarity,
            "final_similarity": self.final_similarity,
        }

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "valid", "similarity", "kind"])
            for p in self.points:
                writer.writerow([p.iteration, int(p.valid), repr(p.similarity), p.kind])


def default_harness_observation() -> tuple[list[SegmentSummary], list[SegmentMeasurements], float]:
    """A fixed 11-segment scene for alignment experiments.

    Deliberately misleading for a label-driven proposer: the segments with
    target evidence sit close to obstacles or deep inside already-explored
    area, so the evaluator's advisory criteria reshuffle the ranking hard.
    """
    # (labels, free depth, overlap); angles spread so segment 5 faces forward.
    # The two car sightings hug obstacles inside explored area, so the
    # evaluator demotes them and a label-driven proposer starts well out of
    # alignment, leaving visible room for feedback-driven improvement.
    spec = [
        ({}, 5.39, 0.89),
        ({"tree": 1}, 6.1, 0.93),
        ({"car": 2}, 0.47, 0.66),
        ({}, 6.07, 0.72),
        ({"car": 1}, 0.54, 0.93),
        ({}, 2.87, 0.87),
        ({"road": 1}, 7.5, 0.08),
        ({"building": 2}, 5.7, 0.77),
        ({}, 3.83, 0.14),
        ({"tree": 2}, 7.15, 0.5),
        ({}, 3.45, 0.3),
    ]
    n = len(spec)
    mid = (n - 1) // 2
    width = 2.0 * math.pi / n
    segments = []
    measurements = []
    for i, (labels, depth, overlap) in enumerate(spec):
        angle = (i - mid) * width
        segments.append(SegmentSummary(i, dict(labels), depth))
        measurements.append(SegmentMeasurements(depth, overlap, angle))
    return segments, measurements, 0.0


def run_convergence_harness(
    proposer,
    iterations: int,
    segments: list[SegmentSummary] | None = None,
    measurements: list[SegmentMeasurements] | None = None,
    prev_heading: float = 0.0,
    config: SearchConfig | None = None,
) -> ConvergenceCurve:
    """Repeatedly show the proposer one fixed observation and measure how its
    raw ordering aligns with the evaluator's ranking, feeding the ranking back
    after each iteration. Mandatory violations score 0 and send corrective
    feedback instead."""
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    config = config or SearchConfig()
    if segments is None or measurements is None:
        segments, measurements, prev_heading = default_harness_observation()
    weights = config.weights
    feedback: list[FeedbackRecord] = []
    points = []
    for it in range(1, iterations + 1):
        request = ProposerRequest("find the nearest car", segments, feedback)
        raw = proposer.propose(request)
        parsed = parse_proposal(raw, len(segments))
        if isinstance(parsed, MandatoryViolation):
            feedback.append(FeedbackRecord(parsed.kind, parsed.message))
            points.append(ConvergencePoint(it, False, 0.0, parsed.kind))
            continue
        ranked = score_and_rank(parsed, measurements, prev_heading, weights)
        feedback.append(FeedbackRecord(ADVISORY_RANKING, advisory_message(ranked), ranked))
        similarity = proposal_similarity(parsed.order, ranked.order)
        points.append(ConvergencePoint(it, True, similarity, ADVISORY_RANKING))
    return ConvergenceCurve(points)
