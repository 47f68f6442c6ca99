"""Forward-simulation backtesting: learn critique guidelines from past
errors and accept them only if they clear the k% gate.

The last ``n`` consecutive, disjoint horizon-blocks of the history become
folds; the final block is the hidden validation fold, the preceding ones
are training folds.  Baseline predictions run on every fold, each training
fold is critiqued, the critiques are consolidated into one guideline
paragraph, and the validation fold is re-run with the guidelines applied.
They are accepted only when the relative MAPE improvement on the validation
fold is at least ``k`` (inclusive).

Consolidation has two routes with the same contract (only advice supported
across folds survives): a deterministic sentence-set route for scripted
runs, and an optional LLM merge for live backends.  Calibration is per
entity: guidelines never cross entities.
"""

from __future__ import annotations

import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Sequence

from .agents import (
    MacroOutlook,
    PipelineConfig,
    bracket_values,
    contextualize,
    ground_truth_events_str,
    macro_forecast,
    micro_forecast,
    synthesize,
)
from .errors import ConfigError, EmptyInput, EmptyIntersection, HistoryTooShort, NonPositiveBaseline
from .gateway import CallRecorder, LlmRequest, complete
from .ingest import ForecastTask
from .metrics import mape, relative_improvement
from .parsers import MicroOutlook, parse_calibration
from .series import MultimodalContext

TRAINING = "training"
HIDDEN_VALIDATION = "hidden_validation"

DEFAULT_SPLITS = 6
DEFAULT_GATE_THRESHOLD = 0.05


@dataclass(frozen=True)
class Fold:
    index: int
    origin_index: int
    horizon: int
    role: str

    @property
    def forecast_indices(self) -> range:
        return range(self.origin_index + 1, self.origin_index + 1 + self.horizon)


@dataclass(frozen=True)
class FoldCritique:
    fold_index: int
    diagnosis: str
    guidelines: str
    fold_mape: float


@dataclass(frozen=True)
class Guidelines:
    text: str
    supporting_folds: frozenset[int]
    accepted: bool
    improvement: float


@dataclass(frozen=True)
class GateDecision:
    improvement: float
    accepted: bool


@dataclass
class CalibrationOutcome:
    folds: list[Fold]
    critiques: list[FoldCritique]
    guidelines: Guidelines | None
    validation_mape_without: float
    validation_mape_with: float | None

    @property
    def accepted(self) -> bool:
        return self.guidelines is not None and self.guidelines.accepted

    def to_json_dict(self) -> dict:
        return {
            "folds": [
                {
                    "index": f.index,
                    "origin_index": f.origin_index,
                    "horizon": f.horizon,
                    "role": f.role,
                }
                for f in self.folds
            ],
            "critiques": [
                {
                    "fold_index": c.fold_index,
                    "diagnosis": c.diagnosis,
                    "guidelines": c.guidelines,
                    "fold_mape": round(c.fold_mape, 6),
                }
                for c in self.critiques
            ],
            "guidelines": None
            if self.guidelines is None
            else {
                "text": self.guidelines.text,
                "supporting_folds": sorted(self.guidelines.supporting_folds),
                "accepted": self.guidelines.accepted,
                "improvement": round(self.guidelines.improvement, 6),
            },
            "validation_mape_without": round(self.validation_mape_without, 6),
            "validation_mape_with": None
            if self.validation_mape_with is None
            else round(self.validation_mape_with, 6),
            "accepted": self.accepted,
        }


# --- fold geometry ------------------------------------------------------------


def make_splits(history_length: int, n: int, horizon: int, context_length: int) -> list[Fold]:
    """The last n consecutive horizon-blocks of the history, oldest first;
    the final block is the unique hidden validation fold."""
    if n < 1 or horizon < 1 or context_length < 1:
        raise ConfigError("n, horizon, and context_length must be positive")
    needed = context_length + n * horizon
    if history_length < needed:
        raise HistoryTooShort(
            f"need >= {needed} points for n={n}, horizon={horizon}, "
            f"context={context_length}; got {history_length}"
        )
    last = history_length - 1
    return [
        Fold(
            index=i,
            origin_index=last - (n - i + 1) * horizon,
            horizon=horizon,
            role=HIDDEN_VALIDATION if i == n else TRAINING,
        )
        for i in range(1, n + 1)
    ]


def fold_task(context: MultimodalContext, fold: Fold, context_length: int) -> ForecastTask:
    """Materialize one fold as a forecast task with in-history ground truth."""
    series = context.series
    first_step = fold.origin_index + 1
    truth_dates = tuple(series.dates[first_step : first_step + fold.horizon])
    truth_events: tuple = ()
    if context.events is not None:
        truth_events = context.events.between(truth_dates[0], truth_dates[-1]).entries
    return ForecastTask(
        task_index=fold.index,
        context=context.window(first_step - context_length, first_step),
        origin_index=fold.origin_index,
        origin_date=series.dates[fold.origin_index],
        horizon=fold.horizon,
        context_length=context_length,
        setting="multimodal" if context.multimodal else "numerical_only",
        frequency=series.frequency,
        truth_values=tuple(series.values[first_step : first_step + fold.horizon]),
        truth_dates=truth_dates,
        truth_events=truth_events,
    )


# --- per-fold critique ----------------------------------------------------------


@dataclass(frozen=True)
class FoldRun:
    """What the critique agent sees about one training fold's attempt."""

    fold: Fold
    synthesizer_prompt: str
    reasoning: str
    values: tuple[float, ...]
    mape: float
    macro_mape: float | None = None
    micro_mape: float | None = None


def _fmt_mape(value: float | None) -> str:
    return "n/a" if value is None else f"{value:.4f}"


def critique_fold(
    run: FoldRun,
    truth_events_summary: str,
    truth_values: Sequence[float],
    config: PipelineConfig,
    recorder: CallRecorder | None = None,
) -> FoldCritique:
    """Ask the calibration agent to diagnose one training fold's errors."""
    if run.fold.role != TRAINING:
        raise ConfigError(f"fold {run.fold.index} is not a training fold")
    from .agents import _run_stage  # stage machinery shared with the agents

    bindings = {
        "value_predictor_prompt": run.synthesizer_prompt,
        "agent_reasoning": run.reasoning,
        "agent_values": bracket_values(run.values),
        "agent_error": f"{run.mape:.4f}",
        "macro_mape": _fmt_mape(run.macro_mape),
        "micro_mape": _fmt_mape(run.micro_mape),
        "actual_events_summary": truth_events_summary,
        "actual_values": bracket_values(truth_values),
    }
    critique = _run_stage(
        f"critique_fold_{run.fold.index}",
        "calibration_agent",
        bindings,
        config,
        parse_calibration,
        recorder,
    )
    return FoldCritique(
        fold_index=run.fold.index,
        diagnosis=critique.diagnosis,
        guidelines=critique.guidelines,
        fold_mape=run.mape,
    )


# --- consolidation ---------------------------------------------------------------

_SENTENCE_SPLIT = re.compile(r"[.!?]+")
_PUNCT = re.compile(r"[^a-z0-9\s]+")

CONSOLIDATION_SYSTEM = (
    "You merge critique guidelines produced on different backtest folds into "
    "one robust set. Keep only the advice supported by a majority of folds."
)
CONSOLIDATION_USER = (
    "Below are the per-fold guideline paragraphs. Merge them into a single "
    "short paragraph that keeps only the points appearing in a majority of "
    "the folds, dropping anything fold-specific.\n\n{numbered}\n\n"
    "Output only the merged paragraph."
)


def _normalize_sentences(text: str) -> list[str]:
    out = []
    for raw in _SENTENCE_SPLIT.split(text):
        norm = _PUNCT.sub("", raw.lower())
        norm = " ".join(norm.split())
        if norm:
            out.append(norm)
    return out


def consolidate_guidelines(
    critiques: Sequence[FoldCritique],
    min_support: float = 0.5,
    llm=None,
    recorder: CallRecorder | None = None,
) -> Guidelines:
    """Keep only advice supported across folds.

    Deterministic route: split each fold's guidelines into normalized
    sentences and keep those appearing in more than ``min_support`` of the
    critiques (strictly more than half by default; 1.0 means every fold).
    Survivors are ordered lexicographically so the result is independent of
    critique order.  ``llm`` switches to the merge-prompt route.

    Raises ``EmptyIntersection`` when nothing is supported widely enough.
    """
    if not critiques:
        raise EmptyInput("need at least one critique")
    if not 0.0 < min_support <= 1.0:
        raise ConfigError("min_support must be in (0, 1]")
    if len(critiques) == 1:
        only = critiques[0]
        return Guidelines(
            text=only.guidelines,
            supporting_folds=frozenset({only.fold_index}),
            accepted=False,
            improvement=0.0,
        )
    if llm is not None:
        numbered = "\n".join(
            f"Fold {c.fold_index}: {c.guidelines}" for c in sorted(critiques, key=lambda c: c.fold_index)
        )
        request = LlmRequest(
            backend_id=llm.backend.backend_id,
            model_id=llm.model_id,
            system_prompt=CONSOLIDATION_SYSTEM,
            user_prompt=CONSOLIDATION_USER.format(numbered=numbered),
            temperature=llm.temperature,
            max_output_tokens=llm.max_output_tokens,
        )
        text = complete(llm.backend, request, recorder, stage="consolidate").text.strip()
        if not text:
            raise EmptyIntersection("consolidation model returned nothing")
        return Guidelines(
            text=text,
            supporting_folds=frozenset(c.fold_index for c in critiques),
            accepted=False,
            improvement=0.0,
        )

    k = len(critiques)
    required = k if min_support >= 1.0 else int(k * min_support) + 1
    per_fold = {c.fold_index: set(_normalize_sentences(c.guidelines)) for c in critiques}
    support: dict[str, set[int]] = {}
    for fold_index, sentences in per_fold.items():
        for s in sentences:
            support.setdefault(s, set()).add(fold_index)
    survivors = sorted(s for s, folds in support.items() if len(folds) >= required)
    if not survivors:
        raise EmptyIntersection(
            f"no sentence is supported by >= {required} of {k} folds"
        )
    supporting = frozenset().union(*(support[s] for s in survivors))
    return Guidelines(
        text=". ".join(survivors) + ".",
        supporting_folds=supporting,
        accepted=False,
        improvement=0.0,
    )


# --- the k% gate -------------------------------------------------------------------


def gate(mape_without: float, mape_with: float, k: float) -> GateDecision:
    """Accept iff relative MAPE improvement on the hidden fold is >= k."""
    if mape_without <= 0:
        raise NonPositiveBaseline(f"mape_without must be > 0, got {mape_without!r}")
    improvement = relative_improvement(mape_without, mape_with)
    return GateDecision(improvement=improvement, accepted=improvement >= k)


# --- full per-entity loop ------------------------------------------------------------


@dataclass
class CalibrationConfig:
    pipeline: PipelineConfig
    horizon: int
    context_length: int
    n: int = DEFAULT_SPLITS
    k: float = DEFAULT_GATE_THRESHOLD
    min_support: float = 0.5
    workers: int = 4


@dataclass
class _FoldAttempt:
    fold: Fold
    task: ForecastTask
    run: FoldRun


def _run_fold(
    task: ForecastTask, config: PipelineConfig, fold: Fold, guidelines: str | None
) -> _FoldAttempt:
    recorder = CallRecorder()
    timeline = contextualize(task, config, recorder)
    macro: MacroOutlook | None = None
    micro: MicroOutlook | None = None
    if config.enable_macro:
        macro = macro_forecast(timeline, task, config, recorder)
    if config.enable_micro:
        micro = micro_forecast(timeline, task, config, recorder)
    result = synthesize(timeline, macro, micro, guidelines, task, config, recorder)
    truth = list(task.truth_values)
    synth_prompt = next(
        ex.request.user_prompt for ex in recorder.exchanges if ex.stage == "synthesize"
    )
    run = FoldRun(
        fold=fold,
        synthesizer_prompt=synth_prompt,
        reasoning=result.reasoning,
        values=tuple(result.values),
        mape=mape(truth, result.values),
        macro_mape=mape(truth, list(macro.values)) if macro is not None else None,
        micro_mape=mape(truth, micro.values) if micro is not None else None,
    )
    return _FoldAttempt(fold=fold, task=task, run=run)


def calibrate_entity(context: MultimodalContext, config: CalibrationConfig) -> CalibrationOutcome:
    """Run the full backtest loop for one entity.

    Baseline (guideline-free) predictions run on all folds concurrently,
    training folds are critiqued concurrently, critiques are consolidated,
    and the hidden validation fold is re-run with the candidate guidelines
    before gating.
    """
    folds = make_splits(len(context.series), config.n, config.horizon, config.context_length)
    base_cfg = replace(config.pipeline, guidelines=None)

    with ThreadPoolExecutor(max_workers=max(1, config.workers)) as pool:
        futures = [
            pool.submit(_run_fold, fold_task(context, f, config.context_length), base_cfg, f, None)
            for f in folds
        ]
        attempts = [f.result() for f in futures]

    validation = attempts[-1]
    training = attempts[:-1]
    validation_mape_without = validation.run.mape

    critiques: list[FoldCritique] = []
    if training:
        with ThreadPoolExecutor(max_workers=max(1, config.workers)) as pool:
            futures = [
                pool.submit(
                    critique_fold,
                    a.run,
                    ground_truth_events_str(a.task),
                    list(a.task.truth_values),
                    base_cfg,
                    None,
                )
                for a in training
            ]
            critiques = [f.result() for f in futures]

    if not critiques:
        return CalibrationOutcome(
            folds=folds,
            critiques=[],
            guidelines=None,
            validation_mape_without=validation_mape_without,
            validation_mape_with=None,
        )

    try:
        candidate = consolidate_guidelines(critiques, min_support=config.min_support)
    except EmptyIntersection:
        return CalibrationOutcome(
            folds=folds,
            critiques=critiques,
            guidelines=None,
            validation_mape_without=validation_mape_without,
            validation_mape_with=None,
        )

    revalidated = _run_fold(validation.task, base_cfg, validation.fold, candidate.text)
    validation_mape_with = revalidated.run.mape
    decision = gate(validation_mape_without, validation_mape_with, config.k)
    final = Guidelines(
        text=candidate.text,
        supporting_folds=candidate.supporting_folds,
        accepted=decision.accepted,
        improvement=decision.improvement,
    )
    return CalibrationOutcome(
        folds=folds,
        critiques=critiques,
        guidelines=final,
        validation_mape_without=validation_mape_without,
        validation_mape_with=validation_mape_with,
    )
