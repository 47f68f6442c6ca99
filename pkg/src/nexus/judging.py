"""Pairwise reasoning-quality evaluation with position randomization.

Each comparison randomizes which method sits in the judge's Model A slot
(seeded, hash-based, so assignments are reproducible and balanced across
seeds), then maps the positional verdict back to method ids.  Cross-judge
discipline - the judge model must differ from both generator models - is
enforced here, not left to configuration conventions.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Sequence

from .agents import AgentBinding, PipelineConfig, bracket_values, _run_stage
from .errors import DuplicateMethod, EmptyInput, SelfJudgeViolation
from .gateway import CallRecorder
from .parsers import JUDGE_CRITERIA, Winner, parse_judge

TIE = "tie"

CRITERION_TITLES = {
    "domain_relevance": "Domain Relevance",
    "event_relevance": "Event Relevance & Plausibility",
    "logic_to_number": "Logic-to-Number Consistency",
    "analytical_depth": "Analytical Depth",
    "overall_preference": "Overall Preference",
}


@dataclass(frozen=True)
class MethodOutput:
    method_id: str
    reasoning: str
    values: tuple[float, ...]


@dataclass
class JudgePair:
    ground_truth_events: str
    left: MethodOutput
    right: MethodOutput
    assignment: dict[str, str]  # position label -> method_id
    seed: int

    def output_for(self, position: str) -> MethodOutput:
        method = self.assignment[position]
        return self.left if self.left.method_id == method else self.right


def assign_positions(
    ground_truth_events: str, left: MethodOutput, right: MethodOutput, seed: int
) -> JudgePair:
    """Deterministically randomize which method the judge sees as Model A."""
    if left.method_id == right.method_id:
        raise DuplicateMethod(f"both sides are {left.method_id!r}")
    digest = hashlib.sha256(
        f"{seed}|{left.method_id}|{right.method_id}".encode("utf-8")
    ).digest()
    if digest[0] & 1:
        assignment = {"Model A": left.method_id, "Model B": right.method_id}
    else:
        assignment = {"Model A": right.method_id, "Model B": left.method_id}
    return JudgePair(
        ground_truth_events=ground_truth_events,
        left=left,
        right=right,
        assignment=assignment,
        seed=seed,
    )


@dataclass(frozen=True)
class MethodVerdict:
    """A judge verdict with positional winners mapped back to method ids."""

    winners: dict[str, str]  # criterion -> method_id or "tie"
    justification: str
    assignment: tuple[tuple[str, str], ...]


def judge_pair(
    pair: JudgePair,
    judge: AgentBinding,
    generator_models: Sequence[str] = (),
    recorder: CallRecorder | None = None,
) -> MethodVerdict:
    """Run one pairwise comparison and de-randomize the verdict."""
    if judge.model_id in set(generator_models):
        raise SelfJudgeViolation(
            f"judge model {judge.model_id!r} also generated the outputs under test"
        )
    model_a = pair.output_for("Model A")
    model_b = pair.output_for("Model B")
    bindings = {
        "ground_truth_events": pair.ground_truth_events,
        "model_a_reasoning": model_a.reasoning,
        "model_a_predicted_values": bracket_values(model_a.values),
        "model_b_reasoning": model_b.reasoning,
        "model_b_predicted_values": bracket_values(model_b.values),
    }
    config = PipelineConfig(default=judge)
    verdict = _run_stage("judge", "judge", bindings, config, parse_judge, recorder)
    mapping = {
        Winner.MODEL_A: pair.assignment["Model A"],
        Winner.MODEL_B: pair.assignment["Model B"],
        Winner.TIE: TIE,
    }
    return MethodVerdict(
        winners={c: mapping[verdict.winners[c]] for c in JUDGE_CRITERIA},
        justification=verdict.justification,
        assignment=tuple(sorted(pair.assignment.items())),
    )


@dataclass(frozen=True)
class TallyCell:
    wins: int
    losses: int
    ties: int

    @property
    def total(self) -> int:
        return self.wins + self.losses + self.ties

    def percentages(self) -> tuple[float, float, float]:
        """(win%, loss%, tie%) rounded to 1 decimal."""
        t = self.total
        return (
            round(100.0 * self.wins / t, 1),
            round(100.0 * self.losses / t, 1),
            round(100.0 * self.ties / t, 1),
        )


@dataclass
class TallyTable:
    subject: str
    opponent: str
    cells: dict[str, TallyCell]  # criterion -> counts

    def to_markdown(self) -> str:
        lines = [
            f"| Evaluation Criteria | Metric | % |",
            "|---|---|---|",
        ]
        for criterion in JUDGE_CRITERIA:
            cell = self.cells[criterion]
            win, loss, tie = cell.percentages()
            title = CRITERION_TITLES[criterion]
            lines.append(f"| {title} | **{self.subject} Win** | {win:.1f}% |")
            lines.append(f"| {title} | {self.opponent} Win | {loss:.1f}% |")
            lines.append(f"| {title} | Tie | {tie:.1f}% |")
        return "\n".join(lines)

    def to_json_dict(self) -> dict:
        out: dict = {"subject": self.subject, "opponent": self.opponent, "criteria": {}}
        for criterion in JUDGE_CRITERIA:
            cell = self.cells[criterion]
            win, loss, tie = cell.percentages()
            out["criteria"][criterion] = {
                "win_pct": win,
                "loss_pct": loss,
                "tie_pct": tie,
                "wins": cell.wins,
                "losses": cell.losses,
                "ties": cell.ties,
            }
        return out


def tally(verdicts: Sequence[MethodVerdict], subject: str, opponent: str) -> TallyTable:
    """Win/tie/loss rates for ``subject`` against ``opponent`` per criterion."""
    if not verdicts:
        raise EmptyInput("no verdicts to tally")
    cells: dict[str, TallyCell] = {}
    for criterion in JUDGE_CRITERIA:
        wins = losses = ties = 0
        for v in verdicts:
            winner = v.winners[criterion]
            if winner == subject:
                wins += 1
            elif winner == opponent:
                losses += 1
            else:
                ties += 1
        cells[criterion] = TallyCell(wins=wins, losses=losses, ties=ties)
    return TallyTable(subject=subject, opponent=opponent, cells=cells)
