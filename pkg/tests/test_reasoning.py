import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from goalsearch.reasoning import (
    ADVISORY_RANKING,
    COUNT_MISMATCH,
    FORMAT_VIOLATION,
    CriteriaWeights,
    MandatoryCriteriaError,
    MandatoryViolation,
    ProposerRequest,
    PropositionList,
    RawProposal,
    SegmentMeasurements,
    SegmentSummary,
    format_proposal,
    parse_proposal,
    proposal_similarity,
    reason_cycle,
    repeat_penalty,
    score_and_rank,
    security_penalty,
    direction_penalty,
)
from goalsearch.proposers import ScriptedProposer

from oracles import cosine_mp

PAPER_WEIGHTS = CriteriaWeights()  # defaults are the published operating point


def flat_measurements(n, depth=10.0):
    return [SegmentMeasurements(depth, 0.0, 0.0) for _ in range(n)]


def make_request(n=11, target="car"):
    segments = [SegmentSummary(i, {}, 10.0) for i in range(n)]
    return ProposerRequest(f"find the nearest {target}", segments)


class TestParser:
    def test_braced_eleven_item_list(self):
        raw = RawProposal("{D4; D5; D6; D3; D7; D8; D2; D9; D1; D0; D10}")
        parsed = parse_proposal(raw, 11)
        assert isinstance(parsed, PropositionList)
        assert parsed.order == (4, 5, 6, 3, 7, 8, 2, 9, 1, 0, 10)

    def test_prose_is_a_format_violation(self):
        parsed = parse_proposal(RawProposal("go towards the parking lot"), 11)
        assert isinstance(parsed, MandatoryViolation)
        assert parsed.kind == FORMAT_VIOLATION

    def test_short_list_is_a_count_mismatch(self):
        parsed = parse_proposal(RawProposal("D0; D1; D2"), 11)
        assert isinstance(parsed, MandatoryViolation)
        assert parsed.kind == COUNT_MISMATCH

    def test_unbraced_and_tight_spacing_accepted(self):
        assert parse_proposal(RawProposal("D1;D0;D2"), 3) == PropositionList((1, 0, 2))
        assert parse_proposal(RawProposal("{ D2 ;D0; D1 }"), 3) == PropositionList((2, 0, 1))

    def test_duplicates_are_a_format_violation(self):
        parsed = parse_proposal(RawProposal("D0; D0; D1"), 3)
        assert isinstance(parsed, MandatoryViolation)
        assert parsed.kind == FORMAT_VIOLATION

    def test_out_of_range_index_is_a_format_violation(self):
        parsed = parse_proposal(RawProposal("D0; D1; D7"), 3)
        assert isinstance(parsed, MandatoryViolation)
        assert parsed.kind == FORMAT_VIOLATION

    def test_empty_text_is_a_format_violation(self):
        parsed = parse_proposal(RawProposal(""), 3)
        assert isinstance(parsed, MandatoryViolation)
        assert parsed.kind == FORMAT_VIOLATION

    def test_even_segment_count_rejected(self):
        with pytest.raises(ValueError, match="odd"):
            parse_proposal(RawProposal("D0; D1"), 2)

    @given(st.permutations(list(range(11))))
    @settings(max_examples=200, deadline=None)
    def test_format_then_parse_round_trips(self, order):
        parsed = parse_proposal(RawProposal(format_proposal(order)), 11)
        assert isinstance(parsed, PropositionList)
        assert parsed.order == tuple(order)

    @given(st.integers(min_value=1, max_value=7), st.data())
    @settings(max_examples=100, deadline=None)
    def test_round_trip_other_sizes(self, k, data):
        n = 2 * k + 1
        order = data.draw(st.permutations(list(range(n))))
        parsed = parse_proposal(RawProposal(format_proposal(order)), n)
        assert parsed == PropositionList(tuple(order))


class TestPenalties:
    def test_security_zero_beyond_safety_distance(self):
        assert security_penalty(2.0, 1.0) == 0.0

    def test_security_at_zero_distance(self):
        assert security_penalty(0.0, 1.0) == 1.0

    def test_security_quadratic_inside(self):
        assert security_penalty(0.5, 1.0) == pytest.approx(0.25)

    def test_repeat_is_identity(self):
        for v in (0.0, 0.37, 1.0):
            assert repeat_penalty(v) == v

    def test_direction_same_heading(self):
        assert direction_penalty(1.2, 1.2) == 0.0

    def test_direction_full_reversal(self):
        assert direction_penalty(0.0, math.pi) == pytest.approx(2.0)

    def test_direction_right_angle(self):
        assert direction_penalty(math.pi / 2, 0.0) == pytest.approx(1.0)


class TestScoreAndRank:
    def test_zero_penalties_preserve_proposer_order(self):
        proposal = PropositionList((2, 0, 1))
        ranked = score_and_rank(proposal, flat_measurements(3), 0.0, PAPER_WEIGHTS)
        assert ranked.order == (2, 0, 1)
        assert ranked.scores == pytest.approx((0.0, 2.5, 5.0))

    def test_unsafe_top_segment_demotes_below_clean_runner_up(self):
        # top pick touches an obstacle: 10.0 beats the runner-up's 2.5
        measurements = [
            SegmentMeasurements(0.0, 0.0, 0.0),
            SegmentMeasurements(10.0, 0.0, 0.0),
            SegmentMeasurements(10.0, 0.0, 0.0),
        ]
        ranked = score_and_rank(PropositionList((0, 1, 2)), measurements, 0.0, PAPER_WEIGHTS)
        assert ranked.order[0] == 1
        assert ranked.scores[0] == pytest.approx(2.5)
        scores = dict(zip(ranked.order, ranked.scores))
        assert scores[0] == pytest.approx(10.0)

    def test_three_segment_manual_arithmetic(self):
        weights = CriteriaWeights()
        measurements = [
            SegmentMeasurements(0.4, 0.25, 0.0),
            SegmentMeasurements(3.0, 1.0, math.pi / 2),
            SegmentMeasurements(0.9, 0.0, math.pi),
        ]
        prev = 0.0
        proposal = PropositionList((1, 2, 0))
        expected = {
            1: 2.5 * 0 + 10.0 * 0.0 + 3.0 * 1.0 + 1.5 * (1 - math.cos(math.pi / 2)),
            2: 2.5 * 1 + 10.0 * (1 - 0.9) ** 2 + 3.0 * 0.0 + 1.5 * (1 - math.cos(math.pi)),
            0: 2.5 * 2 + 10.0 * (1 - 0.4) ** 2 + 3.0 * 0.25 + 1.5 * 0.0,
        }
        ranked = score_and_rank(proposal, measurements, prev, weights)
        for seg, score in zip(ranked.order, ranked.scores):
            assert score == pytest.approx(expected[seg], abs=1e-12)
        assert list(ranked.scores) == sorted(ranked.scores)

    def test_output_is_always_a_permutation(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            n = int(rng.choice([3, 5, 7, 11]))
            proposal = PropositionList(tuple(rng.permutation(n).tolist()))
            ms = [
                SegmentMeasurements(float(rng.uniform(0, 5)), float(rng.uniform(0, 1)),
                                    float(rng.uniform(-math.pi, math.pi)))
                for _ in range(n)
            ]
            ranked = score_and_rank(proposal, ms, 0.3, PAPER_WEIGHTS)
            assert sorted(ranked.order) == list(range(n))

    def test_uniform_weight_scaling_keeps_order(self):
        rng = np.random.default_rng(10)
        for _ in range(30):
            n = 7
            proposal = PropositionList(tuple(rng.permutation(n).tolist()))
            ms = [
                SegmentMeasurements(float(rng.uniform(0, 3)), float(rng.uniform(0, 1)),
                                    float(rng.uniform(-math.pi, math.pi)))
                for _ in range(n)
            ]
            base = score_and_rank(proposal, ms, 0.1, PAPER_WEIGHTS)
            for c in (0.125, 3.0, 40.0):
                scaled = CriteriaWeights(2.5 * c, 10.0 * c, 3.0 * c, 1.5 * c, 1.0)
                again = score_and_rank(proposal, ms, 0.1, scaled)
                assert again.order == base.order
                assert np.allclose(np.array(again.scores), c * np.array(base.scores))

    def test_order_only_weights_reproduce_proposer_order(self):
        weights = CriteriaWeights(1.7, 0.0, 0.0, 0.0)
        rng = np.random.default_rng(12)
        proposal = PropositionList(tuple(rng.permutation(9).tolist()))
        ms = [
            SegmentMeasurements(float(rng.uniform(0, 2)), float(rng.uniform(0, 1)), 0.5)
            for _ in range(9)
        ]
        ranked = score_and_rank(proposal, ms, 0.0, weights)
        assert ranked.order == proposal.order


class TestSimilarity:
    def test_identical_permutations(self):
        assert proposal_similarity((4, 5, 6), (4, 5, 6)) == 1.0

    def test_early_iteration_sequence_against_oracle(self):
        a = (4, 5, 6, 7, 3, 8, 9, 10, 2, 1, 0)
        b = (4, 5, 6, 3, 7, 8, 2, 9, 1, 0, 10)
        assert proposal_similarity(a, b) == pytest.approx(cosine_mp(a, b), abs=1e-12)

    def test_reversed_permutation_against_oracle(self):
        a = tuple(range(11))
        b = tuple(reversed(a))
        assert proposal_similarity(a, b) == pytest.approx(cosine_mp(a, b), abs=1e-12)

    def test_rank_encoding_available(self):
        a, b = (2, 0, 1), (2, 1, 0)
        ra, rb = (1, 2, 0), (2, 1, 0)
        assert proposal_similarity(a, b, encoding="rank") == pytest.approx(cosine_mp(ra, rb))

    def test_length_mismatch_raises(self):
        with pytest.raises(ValueError):
            proposal_similarity((0, 1, 2), (0, 1))

    @given(st.permutations(list(range(7))))
    @settings(max_examples=100, deadline=None)
    def test_self_similarity_is_exactly_one(self, order):
        assert proposal_similarity(order, order) == 1.0


class TestReasonCycle:
    def test_compliant_proposer_used_once(self):
        request = make_request(3)
        proposer = ScriptedProposer(["{D1; D0; D2}"])
        result = reason_cycle(proposer, request, flat_measurements(3), 0.0, PAPER_WEIGHTS)
        assert result.proposer_calls == 1
        assert result.ranked.order == (1, 0, 2)
        assert [f.kind for f in result.feedback] == [ADVISORY_RANKING]

    def test_prose_then_valid_costs_two_calls(self):
        request = make_request(3)
        proposer = ScriptedProposer(["head north, it looks open", "{D0; D1; D2}"])
        result = reason_cycle(proposer, request, flat_measurements(3), 0.0, PAPER_WEIGHTS)
        assert result.proposer_calls == 2
        kinds = [f.kind for f in result.feedback]
        assert kinds == [FORMAT_VIOLATION, ADVISORY_RANKING]
        # the corrective record is visible to the proposer on the retry
        assert request.feedback[0].kind == FORMAT_VIOLATION

    def test_persistent_prose_exhausts_retries(self):
        request = make_request(3)
        proposer = ScriptedProposer(["blah"])
        weights = CriteriaWeights(max_mandatory_retries=3)
        with pytest.raises(MandatoryCriteriaError, match="mandatory criteria") as err:
            reason_cycle(proposer, request, flat_measurements(3), 0.0, weights)
        assert proposer.calls == 3
        assert len(err.value.feedback) == 3
        assert all(f.kind == FORMAT_VIOLATION for f in err.value.feedback)

    def test_count_mismatch_feedback_names_expected_count(self):
        request = make_request(5)
        proposer = ScriptedProposer(["{D0; D1}", "{D0; D1; D2; D3; D4}"])
        result = reason_cycle(proposer, request, flat_measurements(5), 0.0, PAPER_WEIGHTS)
        assert result.proposer_calls == 2
        assert "expected 5" in result.feedback[0].message
