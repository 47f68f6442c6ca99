"""The forecasting agents and their composition into the full pipeline.

Each agent is render prompt -> complete -> parse.  A stage whose output
fails validation is re-prompted exactly once with a terse repair suffix;
a second failure is a hard task error.  The context stage additionally
guards against the agent altering any historical value (the timeline must
restate history, not invent it).

Within a task, the two outlook agents share only the timeline and may run
concurrently; synthesis waits for both.  Deterministic runs rely on
backends keyed by request content (pattern-scripted or replay), which make
outputs independent of thread scheduling.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import timedelta
from typing import Callable

from .errors import ConfigError, ParseError, PipelineError, SeriesTooShort, ValueDrift
from .gateway import CallRecorder, LlmRequest, complete
from .ingest import ForecastTask, format_features, ts_features
from .series import TimeSeries
from .parsers import (
    MicroOutlook,
    TimelineEntry,
    format_timeline,
    parse_micro_json,
    parse_prediction_tag,
    parse_tagged_forecast,
    parse_timeline,
    reasoning_outside_prediction,
)
from .prompts import render
from .series import ForecastResult, MultimodalContext

VALUE_DRIFT_TOLERANCE = 1e-6
NOT_AVAILABLE = "(not available)"
NO_EVENTS = "(no event intelligence available)"
REPAIR_SUFFIX = (
    "Your previous output failed validation: {error}. "
    "Re-emit in the exact required format."
)
GUIDELINES_HEADING = "**Review Guidelines (learned from past errors):**"


# --- prompt serialization helpers --------------------------------------------


def format_value(v: float) -> str:
    """Exact round-trip formatting so restated values can be drift-checked."""
    return repr(float(v))


def bracket_values(values, decimals: int = 4) -> str:
    return "[" + ", ".join(f"{v:.{decimals}f}" for v in values) + "]"


def raw_history_str(context: MultimodalContext) -> str:
    """Date/value lines with the week's event text indented beneath them."""
    lines: list[str] = []
    for d, v in context.series.points:
        lines.append(f"Date: {d.isoformat()} | Value: {format_value(v)}")
        if context.events is not None:
            text = context.events.text_for(d)
            if text:
                for sub in text.split("\n"):
                    lines.append(f"  {sub}")
    return "\n".join(lines)


def history_values_str(context: MultimodalContext) -> str:
    return "\n".join(
        f"Date: {d.isoformat()} | Value: {format_value(v)}" for d, v in context.series.points
    )


def history_text_str(context: MultimodalContext) -> str:
    if context.events is None or not context.events.entries:
        return NO_EVENTS
    lines = []
    for d, text in context.events.entries:
        first, *rest = text.split("\n")
        lines.append(f"Date: {d.isoformat()} | {first}")
        lines.extend(f"  {sub}" for sub in rest)
    return "\n".join(lines)


def future_dates_str(task: ForecastTask) -> str:
    step = timedelta(days=7)
    start = task.origin_date
    return ", ".join((start + (i + 1) * step).isoformat() for i in range(task.horizon))


def guidelines_section(text: str) -> str:
    return f"{GUIDELINES_HEADING}\n{text}\n"


def ground_truth_events_str(task: ForecastTask) -> str:
    """What actually happened over the forecast window, for critics and judges.

    Multimodal tasks get the recorded event texts; numerical-only tasks get
    the realized values rendered as movement descriptions, since there is no
    text to show.
    """
    if task.setting == "multimodal":
        if not task.truth_events:
            return "(no notable events in the forecast window)"
        lines = []
        for d, text in task.truth_events:
            first, *rest = text.split("\n")
            lines.append(f"Date: {d.isoformat()} | {first}")
            lines.extend(f"  {sub}" for sub in rest)
        return "\n".join(lines)
    lines = []
    prev = task.context.series.values[-1]
    for d, v in zip(task.truth_dates, task.truth_values):
        pct = 100.0 * (v - prev) / abs(prev) if prev else 0.0
        if abs(pct) < 0.05:
            lines.append(f"{d.isoformat()}: value held steady at {v:.4f}")
        else:
            word = "rose" if pct > 0 else "fell"
            lines.append(f"{d.isoformat()}: value {word} {abs(pct):.1f}% to {v:.4f}")
        prev = v
    return "\n".join(lines)


def macro_reasoning_str(macro: "MacroOutlook | None") -> str:
    if macro is None:
        return NOT_AVAILABLE
    return f"Reasoning: {macro.narrative}\nForecasted Values: {bracket_values(macro.values)}"


def micro_reasoning_str(micro: MicroOutlook | None) -> str:
    if micro is None:
        return NOT_AVAILABLE
    lines = []
    for s in micro.steps:
        lines.append(
            f"Step {s.timestamp} | Date: {s.date} | Movement: {s.movement_label} "
            f"| Value: {s.adjusted_forecast_value:.4f}"
        )
        lines.append(f"  Drivers: {s.key_drivers}")
    return "\n".join(lines)


# --- configuration ------------------------------------------------------------


@dataclass(frozen=True)
class AgentBinding:
    """Which backend/model one agent talks to."""

    backend: object
    model_id: str
    temperature: float = 0.1
    max_output_tokens: int = 4096


@dataclass
class PipelineConfig:
    default: AgentBinding
    overrides: dict[str, AgentBinding] = field(default_factory=dict)
    enable_macro: bool = True
    enable_micro: bool = True
    guidelines: str | None = None
    parallel_outlooks: bool = True

    def __post_init__(self):
        if not (self.enable_macro or self.enable_micro):
            raise ConfigError("at least one of macro/micro must be enabled")

    def binding_for(self, template_id: str) -> AgentBinding:
        return self.overrides.get(template_id, self.default)


# --- stage execution ----------------------------------------------------------


@dataclass(frozen=True)
class StructuredTimeline:
    """The context agent's cleaned per-timestep history."""

    entries: tuple[TimelineEntry, ...]


@dataclass(frozen=True)
class MacroOutlook:
    values: tuple[float, ...]
    narrative: str


def _run_stage(
    stage: str,
    template_id: str,
    bindings: dict[str, str],
    config: PipelineConfig,
    parser: Callable[[str], object],
    recorder: CallRecorder | None,
):
    """render -> complete -> parse with one repair retry on validation failure."""
    binding = config.binding_for(template_id)
    pair = render(template_id, bindings)
    request = LlmRequest(
        backend_id=binding.backend.backend_id,
        model_id=binding.model_id,
        system_prompt=pair.system,
        user_prompt=pair.user,
        temperature=binding.temperature,
        max_output_tokens=binding.max_output_tokens,
    )
    response = complete(binding.backend, request, recorder, stage=stage)
    try:
        return parser(response.text)
    except (ParseError, ValueDrift) as first_error:
        repair_request = LlmRequest(
            backend_id=request.backend_id,
            model_id=request.model_id,
            system_prompt=request.system_prompt,
            user_prompt=request.user_prompt
            + "\n\n"
            + REPAIR_SUFFIX.format(error=first_error),
            temperature=request.temperature,
            max_output_tokens=request.max_output_tokens,
        )
        retry = complete(binding.backend, repair_request, recorder, stage=stage, repair=True)
        try:
            return parser(retry.text)
        except (ParseError, ValueDrift) as exc:
            raise PipelineError(stage, f"output invalid after repair retry: {exc}") from exc


def _trace_from(recorder: CallRecorder | None) -> dict[str, list[str]]:
    trace: dict[str, list[str]] = {}
    if recorder is not None:
        for ex in recorder.exchanges:
            trace.setdefault(ex.stage, []).append(ex.cache_key)
    return trace


def _features_block(series: TimeSeries) -> str:
    """Full feature block, or a minimal one for contexts too short to
    support slope/autocorrelation estimates."""
    try:
        return format_features(ts_features(series))
    except SeriesTooShort:
        values = series.values
        return "\n".join(
            [
                f"- Count: {len(values)} points from {series.dates[0].isoformat()} "
                f"to {series.dates[-1].isoformat()}",
                f"- Min: {min(values):.4f} | Max: {max(values):.4f}",
                f"- Last value: {values[-1]:.4f}",
            ]
        )


def contextualize(
    task: ForecastTask, config: PipelineConfig, recorder: CallRecorder | None = None
) -> StructuredTimeline:
    """Turn the raw multimodal window into a per-timestep structured timeline."""
    context = task.context
    bindings = {
        "target_name": context.target_name,
        "ts_features": _features_block(context.series),
        "domain": context.domain_label,
        "history_str": raw_history_str(context),
    }

    def parse_and_check(text: str) -> StructuredTimeline:
        entries = parse_timeline(text)
        series = context.series
        if len(entries) != len(series):
            raise ValueDrift(
                f"timeline has {len(entries)} entries for {len(series)} timesteps"
            )
        for entry, (d, v) in zip(entries, series.points):
            if abs(entry.value - v) > VALUE_DRIFT_TOLERANCE:
                raise ValueDrift(
                    f"timeline value {entry.value!r} drifted from history {v!r} at {d}"
                )
        return StructuredTimeline(tuple(entries))

    return _run_stage(
        "contextualize", "context_agent", bindings, config, parse_and_check, recorder
    )


def macro_forecast(
    timeline: StructuredTimeline,
    task: ForecastTask,
    config: PipelineConfig,
    recorder: CallRecorder | None = None,
) -> MacroOutlook:
    bindings = {
        "horizon": str(task.horizon),
        "target_name": task.context.target_name,
        "history_str": format_timeline(list(timeline.entries)),
    }
    forecast = _run_stage(
        "macro",
        "macro_agent",
        bindings,
        config,
        lambda text: parse_tagged_forecast(text, task.horizon),
        recorder,
    )
    return MacroOutlook(values=forecast.values, narrative=forecast.reasoning)


def micro_forecast(
    timeline: StructuredTimeline,
    task: ForecastTask,
    config: PipelineConfig,
    recorder: CallRecorder | None = None,
) -> MicroOutlook:
    bindings = {
        "horizon": str(task.horizon),
        "target_name": task.context.target_name,
        "frequency": task.frequency,
        "history_str": format_timeline(list(timeline.entries)),
    }
    outlook = _run_stage(
        "micro",
        "micro_agent",
        bindings,
        config,
        lambda text: parse_micro_json(text, task.horizon),
        recorder,
    )
    return outlook


def synthesizer_bindings(
    timeline: StructuredTimeline,
    macro: MacroOutlook | None,
    micro: MicroOutlook | None,
    guidelines: str | None,
    task: ForecastTask,
) -> dict[str, str]:
    bindings = {
        "target_name": task.context.target_name,
        "horizon": str(task.horizon),
        "frequency": task.frequency,
        "future_dates": future_dates_str(task),
        "history_str": format_timeline(list(timeline.entries)),
        "macro_reasoning_str": macro_reasoning_str(macro),
        "micro_reasoning_str": micro_reasoning_str(micro),
    }
    if guidelines is not None:
        bindings["guidelines_section"] = guidelines_section(guidelines)
    return bindings


def synthesize(
    timeline: StructuredTimeline,
    macro: MacroOutlook | None,
    micro: MicroOutlook | None,
    guidelines: str | None,
    task: ForecastTask,
    config: PipelineConfig,
    recorder: CallRecorder | None = None,
) -> ForecastResult:
    """Merge the outlooks into the final forecast; disabled outlooks appear
    as a neutral sentinel so the template layout never changes."""
    if macro is None and micro is None:
        raise ConfigError("synthesize needs at least one outlook")
    forecast = _run_stage(
        "synthesize",
        "value_predictor",
        synthesizer_bindings(timeline, macro, micro, guidelines, task),
        config,
        lambda text: parse_tagged_forecast(text, task.horizon),
        recorder,
    )
    return ForecastResult(
        values=list(forecast.values),
        reasoning=forecast.reasoning,
        trace=_trace_from(recorder),
    )


def cot_forecast(
    task: ForecastTask, config: PipelineConfig, recorder: CallRecorder | None = None
) -> ForecastResult:
    """Single-shot chain-of-thought baseline."""
    recorder = recorder if recorder is not None else CallRecorder()
    context = task.context
    bindings = {
        "target_name": context.target_name,
        "domain": context.domain_label,
        "last_date": task.origin_date.isoformat(),
        "horizon": str(task.horizon),
        "frequency": task.frequency,
        "start_date": context.series.dates[0].isoformat(),
        "history_values_str": history_values_str(context),
        "history_text_str": history_text_str(context),
    }

    claimed = {}

    def parse_keep_text(text: str) -> list[float]:
        claimed["text"] = text
        return parse_prediction_tag(text, task.horizon)

    values = _run_stage(
        "cot", "cot_baseline", bindings, config, parse_keep_text, recorder
    )
    return ForecastResult(
        values=list(values),
        reasoning=reasoning_outside_prediction(claimed["text"]),
        trace=_trace_from(recorder),
    )


def run_pipeline(
    task: ForecastTask, config: PipelineConfig, recorder: CallRecorder | None = None
) -> ForecastResult:
    """contextualize -> (macro || micro) -> synthesize."""
    recorder = recorder if recorder is not None else CallRecorder()
    timeline = contextualize(task, config, recorder)
    macro: MacroOutlook | None = None
    micro: MicroOutlook | None = None
    if config.enable_macro and config.enable_micro and config.parallel_outlooks:
        with ThreadPoolExecutor(max_workers=2) as pool:
            macro_f = pool.submit(macro_forecast, timeline, task, config, recorder)
            micro_f = pool.submit(micro_forecast, timeline, task, config, recorder)
            macro, micro = macro_f.result(), micro_f.result()
    else:
        if config.enable_macro:
            macro = macro_forecast(timeline, task, config, recorder)
        if config.enable_micro:
            micro = micro_forecast(timeline, task, config, recorder)
    return synthesize(timeline, macro, micro, config.guidelines, task, config, recorder)
