"""Robot-built semantic occupancy grid: log-odds occupancy, per-cell label beliefs,
and explored-region bookkeeping used by the repeated-exploration penalty."""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
from scipy import ndimage

from ..geometry import GridGeometry, Pose
from .sensing import RayScan, free_cells_along, hit_cells, scan_to_arrays
from .worldmap import EIGHT_CONNECTED

SNAPSHOT_VERSION = 1

UNKNOWN_LABEL = "unknown"

# Log-odds update constants: standard inverse sensor model values, clamped so
# a cell can always be flipped back by contrary evidence.
DEFAULT_OCC_DELTA = 0.85
DEFAULT_FREE_DELTA = -0.4
DEFAULT_CLAMP = 5.0
DEFAULT_OCCUPIED_THRESHOLD = 0.25


def _disk(radius_cells: int) -> np.ndarray:
    r = max(0, radius_cells)
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    return xx * xx + yy * yy <= r * r


class ExploredRegion:
    """Visited free cells plus all sensor-covered free cells for one search run."""

    def __init__(self, geometry: GridGeometry):
        self.geometry = geometry
        self.visited = np.zeros(geometry.shape, dtype=bool)
        self.covered = np.zeros(geometry.shape, dtype=bool)
        self._version = 0
        self._mask_cache: tuple[int, int, np.ndarray] | None = None

    def mark_visited(self, iy: int, ix: int) -> None:
        if not self.visited[iy, ix]:
            self.visited[iy, ix] = True
            self.covered[iy, ix] = True
            self._version += 1

    def add_covered(self, iys: np.ndarray, ixs: np.ndarray) -> None:
        self.covered[iys, ixs] = True

    def explored_mask(self, radius_m: float) -> np.ndarray:
        """Visited cells dilated by the sensor radius: the already-explored area."""
        radius_cells = int(math.ceil(radius_m / self.geometry.cell_size_m - 1e-9))
        cached = self._mask_cache
        if cached is not None and cached[0] == self._version and cached[1] == radius_cells:
            return cached[2]
        if radius_cells <= 0:
            mask = self.visited.copy()
        else:
            mask = ndimage.binary_dilation(self.visited, structure=_disk(radius_cells))
        self._mask_cache = (self._version, radius_cells, mask)
        return mask

    def covered_count(self) -> int:
        return int(self.covered.sum())


def region_overlap_ratio(
    explored: ExploredRegion, segment_cells: np.ndarray, radius_m: float
) -> float:
    """Fraction of a segment's scan-covered free cells already inside the explored area.

    segment_cells is an (N, 2) array of (iy, ix) cells; empty input returns 0
    so blind directions are never double-penalized.
    """
    if len(segment_cells) == 0:
        return 0.0
    mask = explored.explored_mask(radius_m)
    return float(mask[segment_cells[:, 0], segment_cells[:, 1]].mean())


class SemanticGrid:
    """Incrementally built occupancy + semantic-label map.

    Occupancy is log-odds per cell, clamped to +/-clamp. Label evidence is a
    sparse per-cell hit count per label; beliefs put count/(total+1) on each
    observed label and 1/(total+1) on "unknown", so beliefs always sum to 1.
    """

    def __init__(
        self,
        geometry: GridGeometry,
        occ_delta: float = DEFAULT_OCC_DELTA,
        free_delta: float = DEFAULT_FREE_DELTA,
        clamp: float = DEFAULT_CLAMP,
        occupied_threshold: float = DEFAULT_OCCUPIED_THRESHOLD,
    ):
        self.geometry = geometry
        self.occ_delta = float(occ_delta)
        self.free_delta = float(free_delta)
        self.clamp = float(clamp)
        self.occupied_threshold = float(occupied_threshold)
        self.log_odds = np.zeros(geometry.shape, dtype=np.float64)
        self.observed = np.zeros(geometry.shape, dtype=bool)
        self.labels: list[str] = []
        self._label_index: dict[str, int] = {}
        # flat cell index -> {label id -> hit count}
        self._label_counts: dict[int, dict[int, int]] = {}
        self.explored = ExploredRegion(geometry)
        self._occ_version = 0
        self._clearance_cache: tuple[int, np.ndarray] | None = None

    # -- occupancy state -----------------------------------------------------

    @property
    def occupied_mask(self) -> np.ndarray:
        return self.log_odds > self.occupied_threshold

    @property
    def free_mask(self) -> np.ndarray:
        return self.log_odds < -self.occupied_threshold

    @property
    def unknown_mask(self) -> np.ndarray:
        return ~(self.occupied_mask | self.free_mask)

    def cell_state(self, iy: int, ix: int) -> str:
        lo = self.log_odds[iy, ix]
        if lo > self.occupied_threshold:
            return "occupied"
        if lo < -self.occupied_threshold and self.observed[iy, ix]:
            return "free"
        return "unknown"

    def clearance_m(self) -> np.ndarray:
        """Center-to-center distance from each cell to the nearest known-occupied cell."""
        cached = self._clearance_cache
        if cached is not None and cached[0] == self._occ_version:
            return cached[1]
        occ = self.occupied_mask
        if occ.any():
            dist = ndimage.distance_transform_edt(~occ) * self.geometry.cell_size_m
        else:
            dist = np.full(self.geometry.shape, np.inf)
        self._clearance_cache = (self._occ_version, dist)
        return dist

    # -- labels ----------------------------------------------------------------

    def _label_id(self, label: str) -> int:
        if label not in self._label_index:
            self._label_index[label] = len(self.labels)
            self.labels.append(label)
        return self._label_index[label]

    def label_belief(self, iy: int, ix: int) -> dict[str, float]:
        counts = self._label_counts.get(iy * self.geometry.n_cols + ix, {})
        total = sum(counts.values())
        belief = {label: 0.0 for label in self.labels}
        for lid, c in counts.items():
            belief[self.labels[lid]] = c / (total + 1.0)
        belief[UNKNOWN_LABEL] = 1.0 / (total + 1.0)
        return belief

    def cell_label(self, iy: int, ix: int) -> tuple[str, float]:
        """Most likely label and its belief; ("unknown", 1.0) without evidence.

        Count ties break toward the first-registered label for determinism.
        """
        counts = self._label_counts.get(iy * self.geometry.n_cols + ix)
        if not counts:
            return (UNKNOWN_LABEL, 1.0)
        total = sum(counts.values())
        lid, count = min(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        return (self.labels[lid], count / (total + 1.0))

    # -- updates -----------------------------------------------------------------

    def integrate_scan(self, pose: Pose, scan: RayScan) -> None:
        """Fuse one scan: free-space decrements along rays, occupied increments and
        label evidence at hit cells. Deltas accumulate before a single clamp, so
        the result is invariant to ray order within the scan."""
        if len(scan) == 0:
            return
        angles, dists, _ = scan_to_arrays(scan)
        f_ray, f_iy, f_ix = free_cells_along(self.geometry, pose.x, pose.y, angles, dists)
        hits = hit_cells(self.geometry, pose.x, pose.y, scan)

        # A ray's free evidence never includes its own hit cell.
        n_cols = self.geometry.n_cols
        hit_flat_per_ray = np.full(len(scan), -1, dtype=np.int64)
        for k, iy, ix in hits:
            hit_flat_per_ray[k] = iy * n_cols + ix
        keep = (f_iy * n_cols + f_ix) != hit_flat_per_ray[f_ray]
        f_iy, f_ix = f_iy[keep], f_ix[keep]

        delta = np.zeros(self.geometry.shape, dtype=np.float64)
        np.add.at(delta, (f_iy, f_ix), self.free_delta)
        if hits:
            h_iy = np.array([h[1] for h in hits])
            h_ix = np.array([h[2] for h in hits])
            np.add.at(delta, (h_iy, h_ix), self.occ_delta)

        touched = delta != 0.0
        if not touched.any() and not hits:
            return
        self.log_odds = np.clip(self.log_odds + delta, -self.clamp, self.clamp)
        self.observed |= touched
        self.explored.add_covered(f_iy, f_ix)
        self._occ_version += 1

        for k, iy, ix in hits:
            label = scan[k].hit_label
            if label is None:
                continue
            lid = self._label_id(label)
            cell_counts = self._label_counts.setdefault(iy * self.geometry.n_cols + ix, {})
            cell_counts[lid] = cell_counts.get(lid, 0) + 1

    # -- semantic queries ----------------------------------------------------------

    def label_cells(self, label: str, min_belief: float = 0.5) -> np.ndarray:
        """Mask of cells whose most likely label matches with enough belief.

        Cells the robot has since re-observed as free are excluded: label
        evidence on confirmed-empty space is stale (the object moved away).
        """
        mask = np.zeros(self.geometry.shape, dtype=bool)
        if label not in self._label_index:
            return mask
        free = self.free_mask
        n_cols = self.geometry.n_cols
        for flat in self._label_counts:
            iy, ix = divmod(flat, n_cols)
            if free[iy, ix]:
                continue
            best, belief = self.cell_label(iy, ix)
            if best == label and belief >= min_belief - 1e-12:
                mask[iy, ix] = True
        return mask

    def query_label_locations(self, label: str, min_belief: float = 0.5) -> list[tuple[float, float]]:
        """Centroids of 8-connected clusters whose most likely label matches.

        Returns an empty list when the label was never observed (or every
        sighting has been disproven by later free-space evidence).
        """
        mask = self.label_cells(label, min_belief)
        if not mask.any():
            return []
        comp, n = ndimage.label(mask, structure=EIGHT_CONNECTED)
        out = []
        cell = self.geometry.cell_size_m
        for cid in range(1, n + 1):
            iys, ixs = np.nonzero(comp == cid)
            out.append((float((ixs.mean() + 0.5) * cell), float((iys.mean() + 0.5) * cell)))
        return out

    # -- persistence ------------------------------------------------------------------

    def to_dict(self) -> dict:
        counts = []
        for flat in sorted(self._label_counts):
            for lid in sorted(self._label_counts[flat]):
                counts.append([flat, lid, self._label_counts[flat][lid]])
        v_iy, v_ix = np.nonzero(self.explored.visited)
        c_iy, c_ix = np.nonzero(self.explored.covered)
        n_cols = self.geometry.n_cols
        return {
            "version": SNAPSHOT_VERSION,
            "geometry": self.geometry.to_dict(),
            "occ_delta": self.occ_delta,
            "free_delta": self.free_delta,
            "clamp": self.clamp,
            "occupied_threshold": self.occupied_threshold,
            "labels": list(self.labels),
            "log_odds": [float(v) for v in self.log_odds.ravel()],
            "observed": [int(v) for v in self.observed.ravel()],
            "label_counts": counts,
            "visited": [int(v) for v in (v_iy * n_cols + v_ix)],
            "covered": [int(v) for v in (c_iy * n_cols + c_ix)],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SemanticGrid":
        if data.get("version") != SNAPSHOT_VERSION:
            raise ValueError(f"unsupported grid snapshot version {data.get('version')!r}")
        geometry = GridGeometry.from_dict(data["geometry"])
        grid = cls(
            geometry,
            occ_delta=float(data["occ_delta"]),
            free_delta=float(data["free_delta"]),
            clamp=float(data["clamp"]),
            occupied_threshold=float(data["occupied_threshold"]),
        )
        shape = geometry.shape
        grid.log_odds = np.array(data["log_odds"], dtype=np.float64).reshape(shape)
        grid.observed = np.array(data["observed"], dtype=bool).reshape(shape)
        for label in data["labels"]:
            grid._label_id(str(label))
        for flat, lid, count in data["label_counts"]:
            grid._label_counts.setdefault(int(flat), {})[int(lid)] = int(count)
        n_cols = geometry.n_cols
        for flat in data["visited"]:
            grid.explored.visited[divmod(int(flat), n_cols)] = True
        for flat in data["covered"]:
            grid.explored.covered[divmod(int(flat), n_cols)] = True
        grid.explored._version += 1
        return grid

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True)

    @classmethod
    def load(cls, path: str | Path) -> "SemanticGrid":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def reset_explored(self) -> None:
        """Fresh explored region for a new search run over a persisted map."""
        self.explored = ExploredRegion(self.geometry)
