"""Simulated 2D world: ground truth, sensing, semantic grid, and pathfinding."""

from ..geometry import GridGeometry, Pose, wrap_angle
from .pathfinding import (
    astar_path,
    astar_to_near,
    distance_matrix,
    line_of_sight,
    path_cost,
    path_length,
)
from .semantic import ExploredRegion, SemanticGrid, region_overlap_ratio
from .sensing import RayHit, RayScan, sense
from .worldmap import GroundTruthMap, MapObject

__all__ = [
    "ExploredRegion",
    "GridGeometry",
    "GroundTruthMap",
    "MapObject",
    "Pose",
    "RayHit",
    "RayScan",
    "SemanticGrid",
    "astar_path",
    "astar_to_near",
    "distance_matrix",
    "line_of_sight",
    "path_cost",
    "path_length",
    "region_overlap_ratio",
    "sense",
    "wrap_angle",
]
