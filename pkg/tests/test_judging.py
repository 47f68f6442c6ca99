from __future__ import annotations

import json

import pytest

from nexus.agents import AgentBinding
from nexus.errors import DuplicateMethod, EmptyInput, SelfJudgeViolation
from nexus.gateway import CallRecorder, ScriptedBackend
from nexus.judging import (
    JudgePair,
    MethodOutput,
    MethodVerdict,
    TIE,
    assign_positions,
    judge_pair,
    tally,
)
from nexus.parsers import JUDGE_CRITERIA
from nexus.simulate import simulator_backend

NEXUS = MethodOutput("nexus", "a long and detailed reasoning " * 10, (1.0, 2.0))
COT = MethodOutput("cot", "short take", (3.0, 4.0))


def judge_binding(backend=None, model="judge-model"):
    return AgentBinding(backend=backend or simulator_backend(), model_id=model)


class TestAssignPositions:
    def test_deterministic_for_seed(self):
        a = assign_positions("events", NEXUS, COT, seed=42)
        b = assign_positions("events", NEXUS, COT, seed=42)
        assert a.assignment == b.assignment

    def test_assignment_is_bijection(self):
        pair = assign_positions("events", NEXUS, COT, seed=1)
        assert sorted(pair.assignment.values()) == ["cot", "nexus"]

    def test_frequency_balanced_over_seeds(self):
        hits = sum(
            assign_positions("e", NEXUS, COT, seed=s).assignment["Model A"] == "nexus"
            for s in range(1000)
        )
        assert 450 <= hits <= 550

    def test_duplicate_method_rejected(self):
        with pytest.raises(DuplicateMethod):
            assign_positions("e", NEXUS, MethodOutput("nexus", "x", (1.0,)), seed=0)


def canned_verdict(winner: str) -> str:
    return json.dumps(
        {
            "domain_relevance_winner": winner,
            "event_relevance_winner": winner,
            "logic_to_number_winner": winner,
            "analytical_depth_winner": winner,
            "overall_preference": winner,
            "justification": "because",
        }
    )


class TestJudgePair:
    def test_positional_winner_maps_to_method(self):
        pair = JudgePair(
            ground_truth_events="e",
            left=NEXUS,
            right=COT,
            assignment={"Model A": "nexus", "Model B": "cot"},
            seed=0,
        )
        backend = ScriptedBackend(responses=[canned_verdict("Model A")])
        verdict = judge_pair(pair, judge_binding(backend))
        assert verdict.winners["overall_preference"] == "nexus"

    def test_swapped_assignment_inverts_mapping(self):
        pair = JudgePair(
            ground_truth_events="e",
            left=NEXUS,
            right=COT,
            assignment={"Model A": "cot", "Model B": "nexus"},
            seed=0,
        )
        backend = ScriptedBackend(responses=[canned_verdict("Model A")])
        verdict = judge_pair(pair, judge_binding(backend))
        assert verdict.winners["overall_preference"] == "cot"

    def test_involution_with_content_keyed_judge(self):
        # the simulator judge prefers longer reasoning wherever it sits
        for assignment in (
            {"Model A": "nexus", "Model B": "cot"},
            {"Model A": "cot", "Model B": "nexus"},
        ):
            pair = JudgePair(
                ground_truth_events="e",
                left=NEXUS,
                right=COT,
                assignment=assignment,
                seed=0,
            )
            verdict = judge_pair(pair, judge_binding())
            assert verdict.winners["overall_preference"] == "nexus"

    def test_self_judge_violation(self):
        pair = assign_positions("e", NEXUS, COT, seed=0)
        with pytest.raises(SelfJudgeViolation):
            judge_pair(pair, judge_binding(model="gen-1"), generator_models=["gen-1"])

    def test_prompt_carries_positional_contents(self):
        pair = JudgePair(
            ground_truth_events="the ground truth",
            left=NEXUS,
            right=COT,
            assignment={"Model A": "cot", "Model B": "nexus"},
            seed=0,
        )
        backend = ScriptedBackend(responses=[canned_verdict("Tie")])
        recorder = CallRecorder()
        verdict = judge_pair(pair, judge_binding(backend), recorder=recorder)
        prompt = recorder.exchanges[0].request.user_prompt
        assert "the ground truth" in prompt
        a_section = prompt.split("--- MODEL A REASONING ---")[1].split("--- MODEL A PREDICTED VALUES ---")[0]
        assert "short take" in a_section
        assert verdict.winners["overall_preference"] == TIE


def verdict_for(winner: str) -> MethodVerdict:
    return MethodVerdict(
        winners=dict.fromkeys(JUDGE_CRITERIA, winner),
        justification="j",
        assignment=(("Model A", "nexus"), ("Model B", "cot")),
    )


class TestTally:
    def test_hand_arithmetic(self):
        verdicts = [verdict_for("nexus")] * 2 + [verdict_for(TIE)] + [verdict_for("cot")]
        table = tally(verdicts, subject="nexus", opponent="cot")
        assert table.cells["overall_preference"].percentages() == (50.0, 25.0, 25.0)

    def test_all_ties(self):
        table = tally([verdict_for(TIE)] * 3, subject="nexus", opponent="cot")
        assert table.cells["domain_relevance"].percentages() == (0.0, 0.0, 100.0)

    def test_published_row_consistency(self):
        # 971/28/1 of 1000 reproduces the 97.1/2.8/0.1 layout, summing to 100.0
        verdicts = (
            [verdict_for("nexus")] * 971 + [verdict_for("cot")] * 28 + [verdict_for(TIE)]
        )
        table = tally(verdicts, subject="nexus", opponent="cot")
        win, loss, tie = table.cells["overall_preference"].percentages()
        assert (win, loss, tie) == (97.1, 2.8, 0.1)
        assert abs(win + loss + tie - 100.0) <= 0.1

    def test_rows_sum_to_100(self):
        verdicts = [verdict_for("nexus")] * 7 + [verdict_for("cot")] * 5 + [verdict_for(TIE)] * 3
        table = tally(verdicts, subject="nexus", opponent="cot")
        for criterion in JUDGE_CRITERIA:
            win, loss, tie = table.cells[criterion].percentages()
            assert abs(win + loss + tie - 100.0) <= 0.1

    def test_exactly_five_criteria(self):
        table = tally([verdict_for(TIE)], subject="nexus", opponent="cot")
        assert len(table.cells) == 5
        assert set(table.cells) == set(JUDGE_CRITERIA)

    def test_markdown_row_order(self):
        table = tally([verdict_for("nexus")], subject="nexus", opponent="cot")
        md = table.to_markdown()
        first, second, third = [l for l in md.split("\n") if "Domain Relevance" in l]
        assert "**nexus Win**" in first
        assert "cot Win" in second
        assert "Tie" in third

    def test_empty_input(self):
        with pytest.raises(EmptyInput):
            tally([], subject="a", opponent="b")
