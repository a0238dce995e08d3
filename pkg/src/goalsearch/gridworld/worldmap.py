"""Ground-truth world model: obstacle primitives and labeled objects rasterized to a cell grid."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from ..geometry import GridGeometry

NO_LABEL = -1

EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class MapObject:
    """A labeled physical object; occupies the cells within radius_m of its center."""

    label: str
    x: float
    y: float
    radius_m: float

    def to_dict(self) -> dict:
        return {"label": self.label, "x": self.x, "y": self.y, "radius_m": self.radius_m}


class GroundTruthMap:
    """Static world the simulator senses against.

    Obstacle primitives (axis-aligned rects and circles, optionally labeled)
    are rasterized by cell-center containment; objects are rasterized last and
    must sit on a cell left free by everything placed before them.
    """

    def __init__(
        self,
        width_m: float,
        height_m: float,
        cell_size_m: float,
        obstacles: list[dict] | None = None,
        objects: list[MapObject] | None = None,
    ):
        self.geometry = GridGeometry(width_m, height_m, cell_size_m)
        self.obstacles = [dict(o) for o in (obstacles or [])]
        self.objects = [
            o
            if isinstance(o, MapObject)
            else MapObject(str(o["label"]), float(o["x"]), float(o["y"]), float(o["radius_m"]))
            for o in (objects or [])
        ]
        n_rows, n_cols = self.geometry.shape
        self.occupied = np.zeros((n_rows, n_cols), dtype=bool)
        self.label_ids = np.full((n_rows, n_cols), NO_LABEL, dtype=np.int16)
        self.labels: list[str] = []
        self._label_index: dict[str, int] = {}
        self._rasterize()

    # -- construction -------------------------------------------------------

    def _label_id(self, label: str) -> int:
        if label not in self._label_index:
            self._label_index[label] = len(self.labels)
            self.labels.append(label)
        return self._label_index[label]

    def _cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        cell = self.geometry.cell_size_m
        cx = (np.arange(self.geometry.n_cols) + 0.5) * cell
        cy = (np.arange(self.geometry.n_rows) + 0.5) * cell
        return np.meshgrid(cx, cy)

    def _primitive_mask(self, prim: dict) -> np.ndarray:
        cx, cy = self._cell_centers()
        kind = prim.get("type")
        if kind == "rect":
            x0, y0 = float(prim["x"]), float(prim["y"])
            x1 = x0 + float(prim["width"])
            y1 = y0 + float(prim["height"])
            return (cx >= x0) & (cx < x1) & (cy >= y0) & (cy < y1)
        if kind == "circle":
            x0, y0, r = float(prim["x"]), float(prim["y"]), float(prim["radius"])
            return (cx - x0) ** 2 + (cy - y0) ** 2 <= r * r
        raise ValueError(f"unknown obstacle type {kind!r}")

    def _rasterize(self) -> None:
        for prim in self.obstacles:
            mask = self._primitive_mask(prim)
            self.occupied |= mask
            label = prim.get("label")
            if label:
                self.label_ids[mask] = self._label_id(label)
        for obj in self.objects:
            if obj.radius_m <= 0:
                raise ValueError(f"object {obj.label!r} must have a positive radius")
            if not self.geometry.contains(obj.x, obj.y):
                raise ValueError(f"object {obj.label!r} at ({obj.x}, {obj.y}) is out of bounds")
            iy, ix = self.geometry.cell_of(obj.x, obj.y)
            if self.occupied[iy, ix]:
                raise ValueError(f"object {obj.label!r} at ({obj.x}, {obj.y}) is not on a free cell")
            cx, cy = self._cell_centers()
            mask = (cx - obj.x) ** 2 + (cy - obj.y) ** 2 <= obj.radius_m**2
            mask[iy, ix] = True  # tiny objects still occupy their center cell
            lid = self._label_id(obj.label)
            self.occupied |= mask
            self.label_ids[mask] = lid

    # -- queries -------------------------------------------------------------

    def label_at(self, iy: int, ix: int) -> str | None:
        lid = int(self.label_ids[iy, ix])
        return self.labels[lid] if lid >= 0 else None

    def is_free(self, x: float, y: float) -> bool:
        if not self.geometry.contains(x, y):
            return False
        iy, ix = self.geometry.cell_of(x, y)
        return not self.occupied[iy, ix]

    def reachable_free_mask(self, x: float, y: float) -> np.ndarray:
        """Free cells 8-connected to the cell containing (x, y)."""
        free = ~self.occupied
        comp, _ = ndimage.label(free, structure=EIGHT_CONNECTED)
        iy, ix = self.geometry.cell_of(x, y)
        if not free[iy, ix]:
            return np.zeros_like(free)
        return comp == comp[iy, ix]

    def objects_with_label(self, label: str) -> list[MapObject]:
        return [o for o in self.objects if o.label == label]

    # -- persistence ---------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            **self.geometry.to_dict(),
            "obstacles": [dict(o) for o in self.obstacles],
            "objects": [o.to_dict() for o in self.objects],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GroundTruthMap":
        return cls(
            float(data["width_m"]),
            float(data["height_m"]),
            float(data["cell_size_m"]),
            obstacles=data.get("obstacles", []),
            objects=data.get("objects", []),
        )

    @classmethod
    def load(cls, path: str | Path) -> "GroundTruthMap":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
