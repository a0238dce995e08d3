"""Per-label Gaussian-mixture memory of where targets were found.

Each search target gets its own 2D mixture layer. A successful find inserts a
new isotropic component sized by the object; finds close to an existing
component (closer than the sum of the two largest principal standard
deviations) merge into it by moment matching, and weights are renormalized so
each layer stays a probability distribution. Old, low-weight components fade
out through the culling threshold in decay_and_normalize.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

TWO_PI = 2.0 * math.pi

DEFAULT_DROP_EPS = 0.01


@dataclass
class GaussianComponent:
    """One mixture component: weight, 2D mean (m), 2x2 covariance (m^2)."""

    weight: float
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self) -> None:
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(2)
        self.cov = np.asarray(self.cov, dtype=np.float64).reshape(2, 2)

    def validate(self) -> None:
        if not self.weight > 0.0:
            raise ValueError("component weight must be positive")
        a, b = float(self.cov[0, 0]), float(self.cov[0, 1])
        c, d = float(self.cov[1, 0]), float(self.cov[1, 1])
        # symmetric positive-definite for a 2x2: symmetric, positive trace, positive det
        if abs(b - c) > 1e-12 * max(1.0, abs(b), abs(c)):
            raise ValueError("invalid covariance")
        if a + d <= 0.0 or a * d - b * c <= 0.0:
            raise ValueError("invalid covariance")

    def max_std(self) -> float:
        """Largest principal standard deviation, sqrt of the top eigenvalue."""
        a, b = float(self.cov[0, 0]), float(self.cov[0, 1])
        d = float(self.cov[1, 1])
        half_gap = math.hypot((a - d) / 2.0, b)
        return math.sqrt(max(0.0, (a + d) / 2.0 + half_gap))

    def density(self, x: np.ndarray) -> float:
        self.validate()
        det = float(np.linalg.det(self.cov))
        diff = np.asarray(x, dtype=np.float64) - self.mean
        q = float(diff @ np.linalg.solve(self.cov, diff))
        return math.exp(-0.5 * q) / (TWO_PI * math.sqrt(det))


def merge_components(existing: GaussianComponent, new: GaussianComponent) -> GaussianComponent:
    """Moment-matched merge of two components; mass is conserved exactly."""
    wt = existing.weight + new.weight
    mean = (existing.weight * existing.mean + new.weight * new.mean) / wt
    cov = np.zeros((2, 2))
    for comp in (existing, new):
        off = (comp.mean - mean).reshape(2, 1)
        cov += (comp.weight / wt) * (comp.cov + off @ off.T)
    return GaussianComponent(wt, mean, cov)


class Gmm:
    """A single mixture layer; weights sum to 1 whenever components exist."""

    def __init__(self, components: list[GaussianComponent] | None = None):
        self.components: list[GaussianComponent] = list(components or [])

    @property
    def m(self) -> int:
        return len(self.components)

    def validate(self) -> None:
        for comp in self.components:
            comp.validate()
        if self.components:
            total = sum(c.weight for c in self.components)
            if abs(total - 1.0) > 1e-9:
                raise ValueError(f"weights sum to {total}, expected 1")

    def density(self, x) -> float:
        """Mixture probability density at a 2D point."""
        if not self.components:
            raise ValueError("no components")
        return float(sum(c.weight * c.density(x) for c in self.components))

    def density_batch(self, points: np.ndarray) -> np.ndarray:
        """Density at many points at once; points is (N, 2)."""
        if not self.components:
            raise ValueError("no components")
        points = np.asarray(points, dtype=np.float64)
        out = np.zeros(len(points))
        for comp in self.components:
            comp.validate()
            det = float(np.linalg.det(comp.cov))
            inv = np.linalg.inv(comp.cov)
            diff = points - comp.mean
            q = np.einsum("ni,ij,nj->n", diff, inv, diff)
            out += comp.weight * np.exp(-0.5 * q) / (TWO_PI * math.sqrt(det))
        return out

    def normalize(self) -> None:
        total = sum(c.weight for c in self.components)
        if total > 0.0:
            for c in self.components:
                c.weight /= total

    def decay_and_normalize(self, drop_eps: float = DEFAULT_DROP_EPS) -> None:
        """Normalize weights, cull components below drop_eps, renormalize."""
        if not self.components:
            raise ValueError("no components")
        self.normalize()
        survivors = [c for c in self.components if c.weight >= drop_eps]
        if survivors and len(survivors) != len(self.components):
            self.components = survivors
            self.normalize()

    def extract_targets(self) -> list[tuple[tuple[float, float], float]]:
        """(mean, weight) per component, heaviest first; insertion order breaks ties."""
        order = sorted(range(self.m), key=lambda i: (-self.components[i].weight, i))
        return [
            ((float(self.components[i].mean[0]), float(self.components[i].mean[1])),
             float(self.components[i].weight))
            for i in order
        ]


@dataclass
class TaskProbabilityMap:
    """Label -> mixture layer; the cross-task memory of find locations."""

    layers: dict[str, Gmm] = field(default_factory=dict)

    def record_find(
        self, label: str, position, object_radius_m: float, size_scale: float = 1.0
    ) -> None:
        """Insert a confirmed find into the label's layer.

        A fresh component gets mean at the find, isotropic covariance with
        sigma = size_scale * object_radius_m, and weight 1/(m+1). If its mean
        lies within the summed largest standard deviations of an existing
        component it merges into the nearest such component instead of being
        kept. All weights are renormalized afterwards.
        """
        if object_radius_m <= 0.0:
            raise ValueError("object radius must be positive")
        layer = self._layer(label)
        sigma = size_scale * object_radius_m
        new = GaussianComponent(
            weight=1.0 / (layer.m + 1),
            mean=np.asarray(position, dtype=np.float64),
            cov=(sigma * sigma) * np.eye(2),
        )
        new_std = new.max_std()
        nearest = None
        for i, comp in enumerate(layer.components):
            dist = float(np.linalg.norm(new.mean - comp.mean))
            if dist < comp.max_std() + new_std and (nearest is None or dist < nearest[0]):
                nearest = (dist, i)
        if nearest is None:
            layer.components.append(new)
        else:
            i = nearest[1]
            layer.components[i] = merge_components(layer.components[i], new)
        layer.normalize()

    def _layer(self, label: str) -> Gmm:
        return self.layers.setdefault(label, Gmm())

    def layer(self, label: str) -> Gmm | None:
        gmm = self.layers.get(label)
        return gmm if gmm is not None and gmm.m > 0 else None

    def validate(self) -> None:
        for gmm in self.layers.values():
            gmm.validate()

    # -- persistence: one JSON document, {label: [{pi, mu, sigma}]} ------------

    def to_dict(self) -> dict:
        return {
            label: [
                {
                    "pi": c.weight,
                    "mu": [float(v) for v in c.mean],
                    "sigma": [[float(v) for v in row] for row in c.cov],
                }
                for c in gmm.components
            ]
            for label, gmm in self.layers.items()
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TaskProbabilityMap":
        layers = {
            str(label): Gmm(
                [
                    GaussianComponent(float(c["pi"]), np.array(c["mu"]), np.array(c["sigma"]))
                    for c in comps
                ]
            )
            for label, comps in data.items()
        }
        return cls(layers=layers)

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True)

    @classmethod
    def load(cls, path: str | Path) -> "TaskProbabilityMap":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))
