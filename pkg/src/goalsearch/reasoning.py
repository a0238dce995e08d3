"""Proposer/evaluator reasoning loop over panorama segments.

The proposer (a language model or a deterministic stand-in) emits a ranked
direction list as free text. The evaluator first enforces mandatory criteria
(parseable format, item count equal to the segment count) and sends corrective
feedback until they hold, then scores the surviving order with advisory
criteria: obstacle proximity, overlap with already-explored area, and heading
change, each weighted and added to the proposer's own ordering term. The
re-ranked list both drives motion and is fed back so the proposer can adapt.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Protocol, Sequence

FORMAT_VIOLATION = "format_violation"
COUNT_MISMATCH = "count_mismatch"
ADVISORY_RANKING = "advisory_ranking"

_ITEM_RE = re.compile(r"\s*D(\d+)\s*\Z")


@dataclass(frozen=True)
class CriteriaWeights:
    """Advisory-criteria weights and the safety distance for the proximity term."""

    lambda_order: float = 2.5
    lambda_security: float = 10.0
    lambda_repeat: float = 3.0
    lambda_direction: float = 1.5
    d_safe_m: float = 1.0
    max_mandatory_retries: int = 5

    def __post_init__(self) -> None:
        for name in ("lambda_order", "lambda_security", "lambda_repeat", "lambda_direction"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.d_safe_m <= 0:
            raise ValueError("d_safe_m must be positive")


@dataclass(frozen=True)
class SegmentSummary:
    """What the proposer sees about one panorama segment."""

    index: int
    labels: dict[str, int]
    free_depth_m: float


@dataclass(frozen=True)
class SegmentMeasurements:
    """What the evaluator measures about one segment."""

    obstacle_distance_m: float
    overlap: float
    angle_rad: float


@dataclass
class ProposerRequest:
    task_description: str
    segments: list[SegmentSummary]
    feedback: list["FeedbackRecord"] = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.segments)


@dataclass(frozen=True)
class RawProposal:
    text: str


@dataclass(frozen=True)
class PropositionList:
    order: tuple[int, ...]


@dataclass(frozen=True)
class MandatoryViolation:
    kind: str
    message: str


@dataclass(frozen=True)
class RankedPropositions:
    """Segments sorted by ascending score; scores[k] belongs to order[k]."""

    order: tuple[int, ...]
    scores: tuple[float, ...]


@dataclass(frozen=True)
class FeedbackRecord:
    kind: str
    message: str
    ranked: RankedPropositions | None = None


class Proposer(Protocol):
    def propose(self, request: ProposerRequest) -> RawProposal: ...


class MandatoryCriteriaError(RuntimeError):
    """Raised when the proposer never satisfies the mandatory criteria."""

    def __init__(self, message: str, feedback: list[FeedbackRecord]):
        super().__init__(message)
        self.feedback = feedback


def format_proposal(order: Sequence[int]) -> str:
    """Canonical text form of a direction list, e.g. "{D4; D5; D3}"."""
    return "{" + "; ".join(f"D{i}" for i in order) + "}"


def parse_proposal(raw: RawProposal, n: int) -> PropositionList | MandatoryViolation:
    """Parse proposer text against the direction-list grammar.

    Grammar: optional surrounding braces around `D<uint>` items separated by
    semicolons, whitespace allowed around items. Unparseable or duplicated
    items are a format violation; a parseable list of the wrong length is a
    count mismatch. Violations are returned, not raised: they drive the
    corrective-feedback retry loop.
    """
    if n < 3 or n % 2 == 0:
        raise ValueError("segment count must be odd and >= 3")
    text = raw.text.strip()
    if text.startswith("{"):
        text = text[1:]
    if text.endswith("}"):
        text = text[:-1]
    items = text.split(";")
    indices = []
    for item in items:
        m = _ITEM_RE.match(item)
        if m is None:
            return MandatoryViolation(
                FORMAT_VIOLATION,
                "propositions must be a semicolon-separated list of segment ids "
                "like {D0; D1; D2}, one per segment",
            )
        indices.append(int(m.group(1)))
    if len(set(indices)) != len(indices):
        return MandatoryViolation(
            FORMAT_VIOLATION, "each segment id may appear exactly once"
        )
    if len(indices) != n:
        return MandatoryViolation(
            COUNT_MISMATCH, f"expected {n} propositions, one per segment, got {len(indices)}"
        )
    if any(i < 0 or i >= n for i in indices):
        return MandatoryViolation(
            FORMAT_VIOLATION, f"segment ids must lie in D0..D{n - 1}"
        )
    return PropositionList(tuple(indices))


def security_penalty(obstacle_distance_m: float, d_safe_m: float) -> float:
    """Quadratic penalty for directions closer to obstacles than the safety distance."""
    if obstacle_distance_m < 0:
        raise ValueError("distance must be >= 0")
    return max(0.0, d_safe_m - obstacle_distance_m) ** 2


def repeat_penalty(overlap: float) -> float:
    """Pass-through of the explored-area overlap ratio in [0, 1]."""
    if not 0.0 <= overlap <= 1.0:
        raise ValueError("overlap must lie in [0, 1]")
    return overlap


def direction_penalty(angle_rad: float, prev_angle_rad: float) -> float:
    """1 - cos of the heading change; 0 for straight ahead, 2 for a reversal."""
    return 1.0 - math.cos(angle_rad - prev_angle_rad)


def score_and_rank(
    proposal: PropositionList,
    measurements: Sequence[SegmentMeasurements],
    prev_angle_rad: float,
    weights: CriteriaWeights,
) -> RankedPropositions:
    """Combine the proposer's ordering with the advisory penalties and re-rank.

    Segment i scores lambda_order * rank-in-proposal + the weighted penalties;
    lower is better. Ties keep the proposer's order.
    """
    n = len(proposal.order)
    if len(measurements) != n:
        raise ValueError("need one measurement per segment")
    rank_of = {seg: r for r, seg in enumerate(proposal.order)}
    scores = {}
    for seg in proposal.order:
        m = measurements[seg]
        scores[seg] = (
            weights.lambda_order * rank_of[seg]
            + weights.lambda_security * security_penalty(m.obstacle_distance_m, weights.d_safe_m)
            + weights.lambda_repeat * repeat_penalty(m.overlap)
            + weights.lambda_direction * direction_penalty(m.angle_rad, prev_angle_rad)
        )
    ranked = sorted(proposal.order, key=lambda seg: (scores[seg], rank_of[seg]))
    return RankedPropositions(tuple(ranked), tuple(scores[seg] for seg in ranked))


def proposal_similarity(a: Sequence[int], b: Sequence[int], encoding: str = "index") -> float:
    """Cosine similarity between two direction lists.

    With the default "index" encoding the lists are compared as raw segment-id
    sequences; "rank" compares per-segment rank vectors instead. Returns 1.0
    exactly for identical sequences.
    """
    if len(a) != len(b):
        raise ValueError("proposals must rank the same number of segments")
    if encoding == "index":
        va, vb = list(a), list(b)
    elif encoding == "rank":
        va = [0] * len(a)
        vb = [0] * len(b)
        for r, seg in enumerate(a):
            va[seg] = r
        for r, seg in enumerate(b):
            vb[seg] = r
    else:
        raise ValueError(f"unknown encoding {encoding!r}")
    if tuple(va) == tuple(vb):
        return 1.0
    dot = sum(x * y for x, y in zip(va, vb))
    na = math.sqrt(sum(x * x for x in va))
    nb = math.sqrt(sum(y * y for y in vb))
    return dot / (na * nb)


@dataclass
class CycleResult:
    ranked: RankedPropositions
    proposer_calls: int
    feedback: list[FeedbackRecord]


def advisory_message(ranked: RankedPropositions) -> str:
    pairs = ", ".join(f"D{seg}={score:.3f}" for seg, score in zip(ranked.order, ranked.scores))
    return (
        "accepted; evaluator re-ranked to "
        + format_proposal(ranked.order)
        + f" with scores [{pairs}] (lower is better)"
    )


def reason_cycle(
    proposer: Proposer,
    request: ProposerRequest,
    measurements: Sequence[SegmentMeasurements],
    prev_angle_rad: float,
    weights: CriteriaWeights,
) -> CycleResult:
    """One full reasoning cycle: propose, enforce mandatory criteria with
    corrective feedback and retries, then score and rank.

    Every proposer invocation is counted. Feedback records are appended to the
    request (so later cycles and retries see the history) and returned. Raises
    MandatoryCriteriaError after max_mandatory_retries failed attempts.
    """
    collected: list[FeedbackRecord] = []
    for attempt in range(1, weights.max_mandatory_retries + 1):
        raw = proposer.propose(request)
        parsed = parse_proposal(raw, request.n)
        if isinstance(parsed, MandatoryViolation):
            record = FeedbackRecord(parsed.kind, parsed.message)
            request.feedback.append(record)
            collected.append(record)
            continue
        ranked = score_and_rank(parsed, measurements, prev_angle_rad, weights)
        record = FeedbackRecord(ADVISORY_RANKING, advisory_message(ranked), ranked)
        request.feedback.append(record)
        collected.append(record)
        return CycleResult(ranked, attempt, collected)
    raise MandatoryCriteriaError("proposer failed mandatory criteria", collected)
