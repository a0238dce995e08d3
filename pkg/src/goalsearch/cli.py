"""Operator CLI: run episodes and batches, validate scenarios, and drive the
proposer-alignment convergence harness.

Exit codes: 0 success (target found, for `run`), 1 error or validation
failure, 2 search exhausted without finding the target.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .config import SearchConfig
from .proposers import HeuristicProposer
from .scenarios import Scenario
from .sim import (
    OUTCOME_FOUND,
    EpisodeMemory,
    build_proposer,
    run_batch,
    run_convergence_harness,
    run_episode,
)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_EXHAUSTED = 2


def _fail(message: str) -> "click.exceptions.Exit":
    click.echo(f"error: {message}", err=True)
    return click.exceptions.Exit(EXIT_ERROR)


def _load_config(config_path: str | None) -> SearchConfig:
    if config_path is None:
        return SearchConfig()
    try:
        return SearchConfig.load(config_path)
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        raise _fail(f"{config_path}: {exc}")


def _print_config_and_exit(ctx, param, value):
    if not value or ctx.resilient_parsing:
        return
    click.echo(json.dumps(SearchConfig().to_dict(), indent=2, sort_keys=True))
    ctx.exit(EXIT_OK)


@click.group()
@click.option(
    "--show-config",
    is_flag=True,
    callback=_print_config_and_exit,
    expose_value=False,
    is_eager=True,
    help="Print the default configuration as JSON and exit.",
)
def main() -> None:
    """Goal-directed object search simulator."""


@main.command()
@click.option("--scenario", "scenario_path", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--memory", "memory_dir", type=click.Path(), default=None,
              help="Directory with grid.json / taskmap.json from a previous run.")
@click.option("--out", "out_dir", type=click.Path(), default="run_out")
def run(scenario_path, config_path, memory_dir, out_dir):
    """Run one episode; writes trace.jsonl and updated memory into --out."""
    config = _load_config(config_path)
    try:
        scenario = Scenario.load(scenario_path)
        scenario.validate(Path(scenario_path).parent)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        raise _fail(f"{scenario_path}: {exc}")
    memory = None
    if scenario.episode_kind != "first_time":
        if memory_dir is None:
            raise _fail("memory required for experienced episodes (--memory)")
        memory = EpisodeMemory.in_dir(memory_dir)
        if not memory.exists():
            raise _fail(f"memory required: {memory_dir} has no grid.json/taskmap.json")
    elif memory_dir is not None:
        memory = EpisodeMemory.in_dir(memory_dir)
    try:
        result = run_episode(
            scenario,
            memory=memory,
            config=config,
            out_dir=out_dir,
            base_dir=Path(scenario_path).parent,
        )
    except (ValueError, OSError) as exc:
        raise _fail(str(exc))
    trace_path = Path(out_dir) / "trace.jsonl"
    result.trace.write(trace_path)
    totals = result.trace.totals
    click.echo(
        f"outcome={totals['outcome']} path={totals['path_length_m']:.2f}m "
        f"steps={totals['steps']} proposer_calls={totals['proposer_calls']} "
        f"trace={trace_path}"
    )
    if totals["outcome"] == OUTCOME_FOUND:
        sys.exit(EXIT_OK)
    sys.exit(EXIT_ERROR if totals["outcome"] == "error" else EXIT_EXHAUSTED)


@main.command()
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@click.option("--out", "out_dir", type=click.Path(), default="batch_out")
@click.option("--jobs", type=int, default=1, show_default=True,
              help="Episodes run in this many worker processes.")
@click.option("--config", "config_path", type=click.Path(), default=None)
def batch(manifest_path, out_dir, jobs, config_path):
    """Run a manifest of scenarios and write metrics.csv plus aggregates.

    Manifest: {"repetitions": N, "scenarios": [path | {"scenario": path,
    "memory": dir}, ...]}; scenario paths resolve relative to the manifest.
    """
    config = _load_config(config_path)
    try:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise _fail(f"{manifest_path}: {exc}")
    entries_spec = manifest.get("scenarios", [])
    if not entries_spec:
        raise _fail("manifest lists no scenarios")
    base = Path(manifest_path).parent
    entries = []
    for item in entries_spec:
        if isinstance(item, str):
            scenario_file, memory_dir = item, None
        else:
            scenario_file, memory_dir = item["scenario"], item.get("memory")
        path = Path(scenario_file)
        if not path.is_absolute():
            path = base / path
        try:
            scenario = Scenario.load(path)
        except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
            raise _fail(f"{path}: {exc}")
        if memory_dir is not None and not Path(memory_dir).is_absolute():
            memory_dir = str(base / memory_dir)
        entries.append((scenario, memory_dir, path.parent))
    repetitions = int(manifest.get("repetitions", 1))
    table = run_batch(
        [(s, m) for s, m, _ in entries],
        repetitions=repetitions,
        out_dir=out_dir,
        config=config,
        base_dir=entries[0][2] if entries else None,
        jobs=max(1, jobs),
    )
    click.echo(f"{len(table.rows)} episodes -> {Path(out_dir) / 'metrics.csv'}")
    for agg in table.aggregates:
        click.echo(
            f"  {agg['kind']}: mean path {agg['path_length_mean']:.2f} m "
            f"(std {agg['path_length_std']:.2f}) over {agg['episodes']} episodes"
        )
    sys.exit(EXIT_OK)


@main.command()
@click.option("--iterations", type=int, default=30, show_default=True)
@click.option("--backend", type=click.Choice(["heuristic", "scripted", "remote"]), default=None,
              help="Override the configured proposer backend.")
@click.option("--blend", type=float, default=0.5, show_default=True,
              help="Learning blend for the heuristic backend.")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--out", "out_dir", type=click.Path(), default="converge_out")
def converge(iterations, backend, blend, config_path, out_dir):
    """Measure proposer/evaluator alignment over repeated fixed observations."""
    if iterations < 1:
        raise _fail("iterations must be >= 1")
    config = _load_config(config_path)
    if backend is not None:
        config = config.patched({"proposer_backend": backend})
    try:
        if config.proposer_backend == "heuristic":
            proposer = HeuristicProposer("car", blend=blend, mandatory_flubs=2)
        else:
            proposer = build_proposer(config, "car")
    except Exception as exc:  # noqa: BLE001 - backend init must exit cleanly
        raise _fail(str(exc))
    curve = run_convergence_harness(proposer, iterations, config=config)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    curve_path = out / "similarity_curve.csv"
    curve.write_csv(curve_path)
    with open(out / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(curve.summary(), fh, indent=2, sort_keys=True)
    summary = curve.summary()
    click.echo(
        f"{iterations} iterations, mandatory satisfied at "
        f"{summary['first_valid_iteration']}, final similarity "
        f"{summary['final_similarity']} -> {curve_path}"
    )
    sys.exit(EXIT_OK)


@main.command()
@click.option("--scenario", "scenario_path", required=True, type=click.Path())
def validate(scenario_path):
    """Check a scenario file's schema and invariants."""
    try:
        scenario = Scenario.load(scenario_path)
        truth = scenario.validate(Path(scenario_path).parent)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        raise _fail(f"{scenario_path}: {exc}")
    click.echo(
        f"ok: {scenario.episode_kind} episode, target {scenario.target_label!r}, "
        f"map {truth.geometry.n_cols}x{truth.geometry.n_rows} cells at "
        f"{truth.geometry.cell_size_m} m"
    )
    sys.exit(EXIT_OK)


if __name__ == "__main__":
    main()
