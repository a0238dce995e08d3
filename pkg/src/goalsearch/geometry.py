"""Shared planar geometry: poses, angle wrapping, and grid indexing."""

from __future__ import annotations

import math
from dataclasses import dataclass

TWO_PI = 2.0 * math.pi


def wrap_angle(theta: float) -> float:
    """Normalize an angle to the interval (-pi, pi]."""
    wrapped = math.fmod(theta + math.pi, TWO_PI)
    if wrapped <= 0.0:
        wrapped += TWO_PI
    return wrapped - math.pi


@dataclass(frozen=True)
class Pose:
    """Robot pose: position in meters, heading normalized to (-pi, pi]."""

    x: float
    y: float
    heading: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "heading", wrap_angle(self.heading))

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)

    def distance_to(self, other: tuple[float, float]) -> float:
        return math.hypot(self.x - other[0], self.y - other[1])


@dataclass(frozen=True)
class GridGeometry:
    """Extent and resolution shared by the ground-truth map and the robot's grid.

    World coordinates are meters with the origin at the lower-left corner;
    cell (iy, ix) covers [ix*cell, (ix+1)*cell) x [iy*cell, (iy+1)*cell).
    """

    width_m: float
    height_m: float
    cell_size_m: float

    def __post_init__(self) -> None:
        if self.width_m <= 0.0 or self.height_m <= 0.0:
            raise ValueError("map dimensions must be positive")
        if self.cell_size_m <= 0.0:
            raise ValueError("cell size must be positive")

    @property
    def n_cols(self) -> int:
        return max(1, math.ceil(self.width_m / self.cell_size_m - 1e-9))

    @property
    def n_rows(self) -> int:
        return max(1, math.ceil(self.height_m / self.cell_size_m - 1e-9))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def diagonal_m(self) -> float:
        return math.hypot(self.width_m, self.height_m)

    def contains(self, x: float, y: float) -> bool:
        return 0.0 <= x < self.width_m and 0.0 <= y < self.height_m

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        """Map a world point to its (iy, ix) cell. Caller ensures the point is in bounds."""
        ix = min(int(x / self.cell_size_m), self.n_cols - 1)
        iy = min(int(y / self.cell_size_m), self.n_rows - 1)
        return (iy, ix)

    def cell_center(self, iy: int, ix: int) -> tuple[float, float]:
        return ((ix + 0.5) * self.cell_size_m, (iy + 0.5) * self.cell_size_m)

    def to_dict(self) -> dict:
        return {
            "width_m": self.width_m,
            "height_m": self.height_m,
            "cell_size_m": self.cell_size_m,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GridGeometry":
        return cls(float(data["width_m"]), float(data["height_m"]), float(data["cell_size_m"]))
