"""Runtime configuration: evaluation weights, sensing and motion parameters,
and proposer backend selection. Defaults follow the published operating point
where one exists (weights 2.5/10.0/3.0/1.5, 1 m safety distance, 11 segments,
1 m/s speed)."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .reasoning import CriteriaWeights

PROPOSER_BACKENDS = ("scripted", "heuristic", "remote")


@dataclass
class SearchConfig:
    # advisory criteria
    lambda_order: float = 2.5
    lambda_security: float = 10.0
    lambda_repeat: float = 3.0
    lambda_direction: float = 1.5
    d_safe_m: float = 1.0
    max_mandatory_retries: int = 5

    # panorama / sensing
    segment_count: int = 11
    sensor_range_m: float = 8.0
    sensor_rays: int = 96
    detection_range_m: float | None = None  # None -> sensor range

    # motion
    robot_radius_m: float = 0.3
    min_travel_m: float = 3.0
    decision_interval_m: float = 5.0
    move_step_m: float = 0.25
    sense_interval_m: float = 1.0
    speed_mps: float = 1.0
    arrival_tolerance_m: float = 2.0

    # mapping
    occ_delta: float = 0.85
    free_delta: float = -0.4
    log_odds_clamp: float = 5.0
    unknown_cost_multiplier: float = 1.5
    label_belief_threshold: float = 0.5

    # experience memory
    beta: float = 0.5
    component_size_scale: float = 1.0
    drop_eps: float = 0.01

    # search control
    coverage_threshold: float = 0.85
    stall_patience: int = 6  # reasoning decisions without new coverage before fallback
    max_decision_steps: int = 400
    max_path_length_m: float | None = None  # None -> 12 * (width + height)

    # proposer backend
    proposer_backend: str = "heuristic"
    proposer_endpoint: str = ""
    proposer_model: str = "gpt-4o-mini"
    api_key_env: str = "OPENAI_API_KEY"
    proposer_timeout_s: float = 30.0
    proposer_blend: float = 0.0
    proposer_mandatory_flubs: int = 0
    scripted_responses: list[str] = field(default_factory=list)
    replay_fixture: str = ""
    label_affinity: dict[str, list[str]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if self.segment_count < 3 or self.segment_count % 2 == 0:
            raise ValueError("segment_count must be odd and >= 3 (2k+1 rule)")
        for name in ("lambda_order", "lambda_security", "lambda_repeat", "lambda_direction"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.d_safe_m <= 0:
            raise ValueError("d_safe_m must be positive")
        if self.sensor_range_m <= 0:
            raise ValueError("sensor_range_m must be positive")
        if self.sensor_rays < max(8, 4 * self.segment_count):
            raise ValueError("sensor_rays must cover every segment with several rays")
        if not 0.0 <= self.beta < 1.0:
            raise ValueError("beta must lie in [0, 1)")
        if not 0.0 < self.coverage_threshold <= 1.0:
            raise ValueError("coverage_threshold must lie in (0, 1]")
        if self.proposer_backend not in PROPOSER_BACKENDS:
            raise ValueError(f"proposer_backend must be one of {PROPOSER_BACKENDS}")
        if self.unknown_cost_multiplier < 1.0:
            raise ValueError("unknown_cost_multiplier must be >= 1")
        if self.min_travel_m <= 0 or self.decision_interval_m <= 0:
            raise ValueError("travel distances must be positive")

    @property
    def weights(self) -> CriteriaWeights:
        return CriteriaWeights(
            self.lambda_order,
            self.lambda_security,
            self.lambda_repeat,
            self.lambda_direction,
            self.d_safe_m,
            self.max_mandatory_retries,
        )

    @property
    def detection_range(self) -> float:
        return self.detection_range_m if self.detection_range_m is not None else self.sensor_range_m

    def patched(self, overrides: dict) -> "SearchConfig":
        """New config with override keys applied; unknown keys are an error."""
        known = {f.name for f in dataclasses.fields(self)}
        bad = set(overrides) - known
        if bad:
            raise ValueError(f"unknown config keys: {sorted(bad)}")
        return dataclasses.replace(self, **overrides)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def load(cls, path: str | Path) -> "SearchConfig":
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        return cls().patched(data)

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
