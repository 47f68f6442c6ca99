"""Deterministic stand-in responses for every agent prompt.

The simulator is a set of pattern rules for ``ScriptedBackend``: each rule
recognizes one agent's prompt by a distinctive substring and computes a
well-formed response *from the prompt content alone*.  That makes full
pipeline runs a pure function of their inputs - independent of thread
scheduling, process count, or repetition - which is what the offline demo,
the replay-cache tests, and the determinism checks run against.

The responses are deliberately naive forecasts that still differ by agent
so reports have something to compare: the macro view carries the recent
drift forward, the micro view damps it step by step, the synthesizer
averages whatever it is given, and the baseline just repeats the last
value.  They exercise the machinery; accuracy is not the point.
"""

from __future__ import annotations

import re
from datetime import date, timedelta
from statistics import fmean, linear_regression

from .gateway import LlmRequest, ScriptedBackend
from .parsers import (
    MicroOutlook,
    MicroStep,
    TimelineEntry,
    format_micro_json,
    format_timeline,
    parse_timeline,
)

_RAW_POINT = re.compile(r"^Date: (\d{4}-\d{2}-\d{2}) \| Value: (\S+)$", re.MULTILINE)
_MACRO_H = re.compile(r"Predict the next (\d+) values for the target variable")
_MICRO_H = re.compile(r"- Forecast Horizon: (\d+) steps")
_SYNTH_H = re.compile(r"for the next (\d+) steps")
_COT_H = re.compile(r"\*\*Prediction Horizon:\*\* Next (\d+) steps")
_MACRO_VALUES = re.compile(r"Forecasted Values: \[(.*?)\]")
_MICRO_LINE = re.compile(r"^Step \d+ \| Date: .*? \| Movement: .*? \| Value: (\S+)$", re.MULTILINE)
_SECTION = re.compile(r"--- MODEL (A|B) REASONING ---\n(.*?)\n\n--- MODEL \1 PREDICTED VALUES ---", re.DOTALL)


def _trend_forecast(values: list[float], horizon: int) -> list[float]:
    """Last value plus the fitted per-step drift, carried forward."""
    if len(values) >= 8:
        step = linear_regression(range(len(values)), values).slope
    elif len(values) >= 2:
        step = fmean(b - a for a, b in zip(values, values[1:]))
    else:
        step = 0.0
    last = values[-1]
    return [last + step * (i + 1) for i in range(horizon)]


def _timeline_values(prompt: str) -> list[float]:
    return [e.value for e in parse_timeline(prompt)]


def respond_context(request: LlmRequest) -> str:
    entries: list[TimelineEntry] = []
    current: tuple[str, str] | None = None
    content: list[str] = []
    for line in request.user_prompt.split("\n"):
        m = _RAW_POINT.match(line)
        if m:
            if current is not None:
                entries.append(_entry(current, content))
            current = (m.group(1), m.group(2))
            content = []
        elif line.startswith("  ") and current is not None:
            content.append(line.strip())
    if current is not None:
        entries.append(_entry(current, content))
    return format_timeline(entries)


def _entry(point: tuple[str, str], content: list[str]) -> TimelineEntry:
    text = " ".join(content) if content else "Routine week with no notable drivers."
    return TimelineEntry(date=point[0], value=float(point[1]), content=text)


def respond_macro(request: LlmRequest) -> str:
    horizon = int(_MACRO_H.search(request.user_prompt).group(1))
    values = _timeline_values(request.user_prompt)
    forecast = _trend_forecast(values, horizon)
    reasoning = (
        f"The structured history shows a level near {values[-1]:.4f} with a "
        f"recent drift of {forecast[0] - values[-1]:+.4f} per step. Carrying "
        f"that regime forward across all {horizon} steps gives a smooth "
        "macro trajectory without assuming new shocks."
    )
    body = ", ".join(repr(v) for v in forecast)
    return f"<reasoning>\n{reasoning}\n</reasoning>\n<forecasted_values>\n[{body}]\n</forecasted_values>"


def respond_micro(request: LlmRequest) -> str:
    horizon = int(_MICRO_H.search(request.user_prompt).group(1))
    entries = parse_timeline(request.user_prompt)
    values = [e.value for e in entries]
    # same first step as the macro view, then the drift halves every week
    step = _trend_forecast(values, 1)[0] - values[-1]
    forecast = [values[-1] + step * 2.0 * (1.0 - 0.5 ** (i + 1)) for i in range(horizon)]
    try:
        last_date = date.fromisoformat(entries[-1].date.split(" ")[0])
        dates = [(last_date + timedelta(days=7 * (i + 1))).isoformat() for i in range(horizon)]
    except ValueError:
        dates = [f"step {i + 1}" for i in range(horizon)]
    steps = []
    prev = values[-1]
    for i in range(horizon):
        delta = forecast[i] - prev
        label = "Stable" if abs(delta) < 1e-9 else ("Up" if delta > 0 else "Down")
        steps.append(
            MicroStep(
                timestamp=i + 1,
                date=dates[i],
                day_info="No scheduled catalyst; momentum week.",
                movement_label=label,
                key_drivers="Continuation of the recent short-term drift.",
                adjusted_forecast_value=round(forecast[i], 6),
            )
        )
        prev = forecast[i]
    return "```json\n" + format_micro_json(MicroOutlook(tuple(steps))) + "\n```"


def respond_value_predictor(request: LlmRequest) -> str:
    prompt = request.user_prompt
    horizon = int(_SYNTH_H.search(prompt).group(1))
    macro_m = _MACRO_VALUES.search(prompt)
    macro = [float(x) for x in macro_m.group(1).split(",")] if macro_m else None
    micro = [float(m) for m in _MICRO_LINE.findall(prompt)] or None
    if macro is not None and micro is not None and len(macro) == len(micro) == horizon:
        merged = [(a + b) / 2 for a, b in zip(macro, micro)]
        blend = "averaged the macro and micro values step by step"
    elif macro is not None and len(macro) == horizon:
        merged = list(macro)
        blend = "followed the macro outlook (micro view unavailable)"
    elif micro is not None and len(micro) == horizon:
        merged = list(micro)
        blend = "followed the micro breakdown (macro view unavailable)"
    else:
        merged = _trend_forecast(_timeline_values(prompt), horizon)
        blend = "extrapolated the structured history directly"
    anchored = ""
    if "**Review Guidelines" in prompt:
        history = _timeline_values(prompt)
        last = history[-1]
        merged = [0.9 * v + 0.1 * last for v in merged]
        anchored = " Following the review guidelines, each step was anchored toward the latest observed level."
    reasoning = (
        f"For each of the {horizon} steps I {blend}, keeping the path smooth "
        f"and consistent with the final historical level.{anchored}"
    )
    body = ", ".join(repr(v) for v in merged)
    return f"<reasoning>\n{reasoning}\n</reasoning>\n<forecasted_values>\n[{body}]\n</forecasted_values>"


def respond_cot(request: LlmRequest) -> str:
    horizon = int(_COT_H.search(request.user_prompt).group(1))
    values = [float(m.group(2)) for m in _RAW_POINT.finditer(request.user_prompt)]
    body = ", ".join(repr(values[-1]) for _ in range(horizon))
    return (
        "The history ends at "
        f"{values[-1]:.4f}; without stronger signals the level should persist.\n"
        f"<prediction>{body}</prediction>"
    )


def respond_calibration(request: LlmRequest) -> str:
    return (
        "1. <diagnosis>The synthesizer followed the blended trend but "
        "overshot turning points and ignored the reported level of recent "
        "weeks.</diagnosis>\n"
        "2. <guidelines>Anchor each forecast step to the most recent "
        "observed level. Damp extrapolated trends beyond the first two "
        "steps.</guidelines>"
    )


def respond_judge(request: LlmRequest) -> str:
    sections = {m.group(1): m.group(2) for m in _SECTION.finditer(request.user_prompt)}
    a = sections.get("A", "")
    b = sections.get("B", "")
    if len(a) > len(b):
        winner = "Model A"
    elif len(b) > len(a):
        winner = "Model B"
    else:
        winner = "Tie"
    return (
        "{\n"
        f'  "domain_relevance_winner": "{winner}",\n'
        f'  "event_relevance_winner": "{winner}",\n'
        f'  "logic_to_number_winner": "{winner}",\n'
        f'  "analytical_depth_winner": "{winner}",\n'
        f'  "overall_preference": "{winner}",\n'
        '  "justification": "The preferred reasoning engages more of the '
        'provided evidence and ties it to the numeric path."\n'
        "}"
    )


def respond_consolidation(request: LlmRequest) -> str:
    return (
        "Anchor each forecast step to the most recent observed level and "
        "damp extrapolated trends beyond the first two steps."
    )


def simulator_rules() -> list[tuple[str, object]]:
    """Pattern rules in match order (most specific markers first)."""
    return [
        ("You are an expert causal analysis agent", respond_context),
        ("You are a Forecasting Strategy Optimizer", respond_calibration),
        ("--- MODEL A REASONING ---", respond_judge),
        ("You merge critique guidelines", respond_consolidation),
        ("Macro-Reasoning Outlook (Overarching Logic & Values)", respond_value_predictor),
        ('"timestamp_forecasts"', respond_micro),
        ("<forecasted_values>", respond_macro),
        ("<prediction>", respond_cot),
    ]


def simulator_backend(backend_id: str = "sim") -> ScriptedBackend:
    return ScriptedBackend(backend_id=backend_id, rules=simulator_rules())
