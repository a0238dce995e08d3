"""Scenario files and seeded scenario generation.

A scenario is a JSON document naming a map file, the target label, the robot
start pose, the episode kind, a seed, and optional config overrides. The
generators build reproducible desk-scale (60 x 40 m) and campus-scale
(320 x 210 m) worlds with a target location plus a distinct alternate location
used by changed-task experiments.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import SearchConfig
from .geometry import Pose
from .gridworld import GroundTruthMap

EPISODE_KINDS = ("first_time", "experienced_same", "experienced_changed")


@dataclass
class Scenario:
    map_file: str
    target_label: str
    robot_start: Pose
    episode_kind: str = "first_time"
    seed: int = 0
    overrides: dict = field(default_factory=dict)

    def validate(self, base_dir: Path | None = None) -> GroundTruthMap:
        """Check schema and invariants; returns the loaded map on success."""
        if self.episode_kind not in EPISODE_KINDS:
            raise ValueError(f"episode_kind must be one of {EPISODE_KINDS}")
        path = self.resolve_map(base_dir)
        if not path.exists():
            raise ValueError(f"map file {path} does not exist")
        truth = GroundTruthMap.load(path)
        if not truth.is_free(self.robot_start.x, self.robot_start.y):
            raise ValueError("robot_start must lie on a free cell inside the map")
        SearchConfig().patched(self.overrides)  # raises on bad keys or values
        if not any(o.label == self.target_label for o in truth.objects):
            raise ValueError(f"map contains no object labeled {self.target_label!r}")
        return truth

    def resolve_map(self, base_dir: Path | None = None) -> Path:
        path = Path(self.map_file)
        if not path.is_absolute() and base_dir is not None:
            path = Path(base_dir) / path
        return path

    def to_dict(self) -> dict:
        return {
            "map_file": self.map_file,
            "target_label": self.target_label,
            "robot_start": {
                "x": self.robot_start.x,
                "y": self.robot_start.y,
                "heading": self.robot_start.heading,
            },
            "episode_kind": self.episode_kind,
            "seed": self.seed,
            "overrides": self.overrides,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Scenario":
        start = data["robot_start"]
        return cls(
            map_file=str(data["map_file"]),
            target_label=str(data["target_label"]),
            robot_start=Pose(float(start["x"]), float(start["y"]), float(start.get("heading", 0.0))),
            episode_kind=str(data.get("episode_kind", "first_time")),
            seed=int(data.get("seed", 0)),
            overrides=dict(data.get("overrides", {})),
        )

    @classmethod
    def load(cls, path: str | Path) -> "Scenario":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)


@dataclass(frozen=True)
class GeneratedWorld:
    """A generated map plus the placements the trend experiments need."""

    map_dict: dict
    start: Pose
    target_primary: tuple[float, float]
    target_alternate: tuple[float, float]
    target_label: str
    target_radius_m: float


def _border(width: float, height: float, thick: float) -> list[dict]:
    return [
        {"type": "rect", "x": 0, "y": 0, "width": width, "height": thick},
        {"type": "rect", "x": 0, "y": height - thick, "width": width, "height": thick},
        {"type": "rect", "x": 0, "y": 0, "width": thick, "height": height},
        {"type": "rect", "x": width - thick, "y": 0, "width": thick, "height": height},
    ]


def generate_desk_world(
    seed: int,
    width: float = 60.0,
    height: float = 40.0,
    cell: float = 0.5,
    target_label: str = "car",
) -> GeneratedWorld:
    """Seeded 60 x 40 m world: bordered, with scattered buildings and trees, a
    start in the lower-left region, and two far-apart candidate target spots
    (both reachable from the start, verified on the rasterized grid)."""
    area = width * height
    n_buildings = max(2, round(area / 340))
    n_trees = max(2, round(area / 400))
    max_side = min(width, height) / 5.0
    separation = min(15.0, 0.45 * min(width, height))
    for attempt in range(64):
        rng = np.random.default_rng((seed << 8) + attempt)
        obstacles = _border(width, height, 1.0)
        for _ in range(n_buildings):
            w = float(rng.uniform(3, max(3.5, max_side)))
            h = float(rng.uniform(3, max(3.5, max_side * 0.9)))
            x = float(rng.uniform(4, width - 4 - w))
            y = float(rng.uniform(4, height - 4 - h))
            obstacles.append(
                {"type": "rect", "x": x, "y": y, "width": w, "height": h, "label": "building"}
            )
        for _ in range(n_trees):
            obstacles.append(
                {
                    "type": "circle",
                    "x": float(rng.uniform(4, width - 4)),
                    "y": float(rng.uniform(4, height - 4)),
                    "radius": float(rng.uniform(0.6, 1.4)),
                    "label": "tree",
                }
            )
        start = Pose(
            float(rng.uniform(3, max(4.0, width * 0.15))),
            float(rng.uniform(3, max(4.0, height * 0.2))),
            0.0,
        )
        primary = (float(rng.uniform(width * 0.6, width - 4)), float(rng.uniform(height * 0.5, height - 4)))
        alternate = (float(rng.uniform(4, width * 0.4)), float(rng.uniform(height * 0.6, height - 4)))
        radius = 1.0

        base = {
            "width_m": width,
            "height_m": height,
            "cell_size_m": cell,
            "obstacles": obstacles,
            "objects": [],
        }
        if _verify_world(base, start, primary, alternate, radius, separation):
            candidate = dict(base)
            candidate["objects"] = [
                {"label": target_label, "x": primary[0], "y": primary[1], "radius_m": radius}
            ]
            return GeneratedWorld(candidate, start, primary, alternate, target_label, radius)
    raise RuntimeError(f"could not generate a valid desk world for seed {seed}")


def generate_campus_world(seed: int, target_label: str = "car") -> GeneratedWorld:
    """Large 320 x 210 m variant for scale tests."""
    return generate_desk_world(seed, width=320.0, height=210.0, cell=0.5, target_label=target_label)


def _verify_world(map_dict, start, primary, alternate, radius, separation) -> bool:
    """Placements must be mutually clear and reachable from the start.

    Runs on the object-free base map: the target itself occupies cells once
    placed, so each candidate spot is checked as a clear, reachable ring.
    """
    try:
        truth = GroundTruthMap.from_dict(map_dict)
    except ValueError:
        return False
    if not truth.is_free(start.x, start.y):
        return False
    reach = truth.reachable_free_mask(start.x, start.y)
    for spot in (primary, alternate):
        if math.dist(spot, start.position) < separation:
            return False
        if not _spot_clear(truth, reach, spot, radius):
            return False
    if math.dist(primary, alternate) < separation:
        return False
    return _spot_clear(truth, reach, start.position, 0.5)


def _spot_clear(truth: GroundTruthMap, reach, spot, radius) -> bool:
    geo = truth.geometry
    pad = radius + 1.5
    if not (pad <= spot[0] < geo.width_m - pad and pad <= spot[1] < geo.height_m - pad):
        return False
    r_cells = int(math.ceil(pad / geo.cell_size_m))
    ciy, cix = geo.cell_of(*spot)
    reachable_ring = 0
    for iy in range(max(0, ciy - r_cells), min(geo.n_rows, ciy + r_cells + 1)):
        for ix in range(max(0, cix - r_cells), min(geo.n_cols, cix + r_cells + 1)):
            if truth.occupied[iy, ix]:
                return False
            if reach[iy, ix]:
                reachable_ring += 1
    return reachable_ring > 0


def write_world(world: GeneratedWorld, map_path: str | Path) -> None:
    with open(map_path, "w", encoding="utf-8") as fh:
        json.dump(world.map_dict, fh, indent=2, sort_keys=True)


def scenario_for_world(
    world: GeneratedWorld,
    map_path: str | Path,
    episode_kind: str = "first_time",
    seed: int = 0,
    overrides: dict | None = None,
) -> Scenario:
    return Scenario(
        map_file=str(map_path),
        target_label=world.target_label,
        robot_start=world.start,
        episode_kind=episode_kind,
        seed=seed,
        overrides=dict(overrides or {}),
    )


def world_with_target_at(world: GeneratedWorld, position: tuple[float, float]) -> dict:
    """Copy of the generated map with the target object moved to `position`."""
    map_dict = json.loads(json.dumps(world.map_dict))
    map_dict["objects"] = [
        obj for obj in map_dict["objects"] if obj["label"] != world.target_label
    ] + [
        {
            "label": world.target_label,
            "x": position[0],
            "y": position[1],
            "radius_m": world.target_radius_m,
        }
    ]
    return map_dict
