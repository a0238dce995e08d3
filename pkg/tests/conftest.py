import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from goalsearch.gridworld import GroundTruthMap, SemanticGrid


def empty_map(width=10.0, height=10.0, cell=0.1, **kw):
    return GroundTruthMap(width, height, cell, **kw)


@pytest.fixture
def boxed_map():
    """10x10 m room with a 0.4 m thick border wall, 0.1 m cells."""
    return bordered_map(10.0, 10.0, 0.1)


def bordered_map(width, height, cell, obstacles=(), objects=(), wall=0.4):
    border = [
        {"type": "rect", "x": 0, "y": 0, "width": width, "height": wall},
        {"type": "rect", "x": 0, "y": height - wall, "width": width, "height": wall},
        {"type": "rect", "x": 0, "y": 0, "width": wall, "height": height},
        {"type": "rect", "x": width - wall, "y": 0, "width": wall, "height": height},
    ]
    return GroundTruthMap(
        width, height, cell, obstacles=border + list(obstacles), objects=list(objects)
    )


def grid_from_truth(truth, **kw):
    return SemanticGrid(truth.geometry, **kw)


def fully_observed_grid(truth, swept=False, **kw):
    """Semantic grid that already knows the whole ground truth (for path tests).

    With swept=True the current run is treated as having sensor-covered every
    free cell too (as if the robot had just traversed everything).
    """
    grid = SemanticGrid(truth.geometry, **kw)
    grid.log_odds = np.where(truth.occupied, grid.clamp, -grid.clamp)
    grid.observed[:] = True
    grid._occ_version += 1
    if swept:
        grid.explored.covered |= grid.free_mask
    return grid


def sweep_covered(grid):
    """Mark every currently-free cell as covered by this run's sensing."""
    grid.explored.covered = grid.free_mask.copy()
    grid.explored._version += 1
