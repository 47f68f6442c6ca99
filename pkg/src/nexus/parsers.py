"""Strict parsers for every agent output grammar.

Every parser is total: any input yields either a typed value or a typed
``ParseError`` subclass - never an uncaught exception.  Horizon-bearing
parsers never return a value list whose length differs from the requested
horizon.  Strictness is deliberate (numbers are never guessed); the only
tolerated sloppiness is documented per parser: whole-payload code fences,
``//`` line comments outside JSON strings, case/whitespace drift in judge
winner strings, and ``[...]`` wrappers on timeline fields.

Each parser has a matching ``format_*`` function producing output the
parser accepts, used by scripted fixtures and round-trip tests.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from enum import Enum

from .errors import ParseError


class MissingTag(ParseError):
    def __init__(self, which: str, span: tuple[int, int] | None = None):
        super().__init__(f"missing or empty <{which}> block", span)
        self.which = which


class MalformedNumber(ParseError):
    pass


class HorizonMismatch(ParseError):
    def __init__(self, expected: int, got: int, span: tuple[int, int] | None = None):
        super().__init__(f"expected {expected} values, got {got}", span)
        self.expected = expected
        self.got = got


class NotJson(ParseError):
    pass


class MissingKey(ParseError):
    """A required key is absent or holds a value of the wrong type."""

    def __init__(self, path: str, span: tuple[int, int] | None = None):
        super().__init__(f"missing or invalid key: {path}", span)
        self.path = path


class BadMovementLabel(ParseError):
    pass


class BadWinnerString(ParseError):
    pass


class TimelineParseError(ParseError):
    pass


# --- shared helpers ---------------------------------------------------------

_NUMBER = re.compile(r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?")
_FENCE = re.compile(r"\A```[a-zA-Z0-9]*\n(.*)\n```\Z", re.DOTALL)


def _parse_real(token: str, span: tuple[int, int] | None = None) -> float:
    token = token.strip()
    if not _NUMBER.fullmatch(token):
        raise MalformedNumber(f"not a real number: {token!r}", span)
    value = float(token)
    if not math.isfinite(value):
        raise MalformedNumber(f"non-finite number: {token!r}", span)
    return value


def _first_tag(text: str, tag: str) -> tuple[str, tuple[int, int]]:
    open_t, close_t = f"<{tag}>", f"</{tag}>"
    start = text.find(open_t)
    if start < 0:
        raise MissingTag(tag)
    end = text.find(close_t, start + len(open_t))
    if end < 0:
        raise MissingTag(tag, (start, len(text)))
    inner_start = start + len(open_t)
    return text[inner_start:end], (inner_start, end)


def _strip_fence(text: str) -> str:
    m = _FENCE.match(text.strip())
    return m.group(1) if m else text


def _strip_line_comments(text: str) -> str:
    """Drop // comments outside JSON strings (models copy them from the
    prompt's example payload)."""
    out: list[str] = []
    in_string = False
    escaped = False
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if in_string:
            out.append(ch)
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
            i += 1
        else:
            if ch == '"':
                in_string = True
                out.append(ch)
                i += 1
            elif ch == "/" and i + 1 < n and text[i + 1] == "/":
                while i < n and text[i] != "\n":
                    i += 1
            else:
                out.append(ch)
                i += 1
    return "".join(out)


def _load_json(text: str) -> object:
    cleaned = _strip_line_comments(_strip_fence(text))
    try:
        return json.loads(cleaned, parse_constant=_reject_constant)
    except (ValueError, RecursionError) as exc:
        raise NotJson(f"not valid JSON: {exc}") from exc


def _reject_constant(name: str):
    raise ValueError(f"non-finite JSON constant {name!r}")


def _is_real(x: object) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


# --- tagged forecast (macro agent, value predictor) -------------------------


@dataclass(frozen=True)
class TaggedForecast:
    reasoning: str
    values: tuple[float, ...]


def parse_tagged_forecast(text: str, horizon: int) -> TaggedForecast:
    """Extract <reasoning> and a bracketed value array in <forecasted_values>."""
    reasoning, _ = _first_tag(text, "reasoning")
    payload, span = _first_tag(text, "forecasted_values")
    body = payload.strip()
    if not (body.startswith("[") and body.endswith("]")):
        raise MalformedNumber("expected a bracketed array of values", span)
    values = _parse_csv_reals(body[1:-1], span)
    if len(values) != horizon:
        raise HorizonMismatch(horizon, len(values), span)
    return TaggedForecast(reasoning.strip(), tuple(values))


def _parse_csv_reals(body: str, span: tuple[int, int]) -> list[float]:
    if not body.strip():
        return []
    return [_parse_real(item, span) for item in body.split(",")]


def format_tagged_forecast(forecast: TaggedForecast) -> str:
    values = ", ".join(repr(v) for v in forecast.values)
    return (
        f"<reasoning>\n{forecast.reasoning}\n</reasoning>\n"
        f"<forecasted_values>\n[{values}]\n</forecasted_values>"
    )


# --- per-step micro forecast JSON -------------------------------------------


MOVEMENT_LABELS = ("Up", "Down", "Stable")


@dataclass(frozen=True)
class MicroStep:
    timestamp: int
    date: str
    day_info: str
    movement_label: str
    key_drivers: str
    adjusted_forecast_value: float


@dataclass(frozen=True)
class MicroOutlook:
    steps: tuple[MicroStep, ...]

    @property
    def values(self) -> list[float]:
        return [s.adjusted_forecast_value for s in self.steps]


def parse_micro_json(text: str, horizon: int) -> MicroOutlook:
    """Parse the strict ``timestamp_forecasts`` JSON payload."""
    root = _load_json(text)
    if not isinstance(root, dict) or "timestamp_forecasts" not in root:
        raise MissingKey("timestamp_forecasts")
    raw_steps = root["timestamp_forecasts"]
    if not isinstance(raw_steps, list):
        raise MissingKey("timestamp_forecasts")
    steps: list[MicroStep] = []
    for i, raw in enumerate(raw_steps):
        prefix = f"timestamp_forecasts[{i}]"
        if not isinstance(raw, dict):
            raise MissingKey(prefix)
        ts = raw.get("timestamp")
        if not isinstance(ts, int) or isinstance(ts, bool):
            raise MissingKey(f"{prefix}.timestamp")
        date_s = raw.get("date")
        if not isinstance(date_s, str):
            raise MissingKey(f"{prefix}.date")
        day_info = raw.get("day_info")
        if not isinstance(day_info, str):
            raise MissingKey(f"{prefix}.day_info")
        reasoning = raw.get("reasoning")
        if not isinstance(reasoning, dict):
            raise MissingKey(f"{prefix}.reasoning")
        label = reasoning.get("movement_label")
        if not isinstance(label, str):
            raise MissingKey(f"{prefix}.reasoning.movement_label")
        if label not in MOVEMENT_LABELS:
            raise BadMovementLabel(f"{prefix}: movement_label {label!r}")
        drivers = reasoning.get("key_drivers")
        if not isinstance(drivers, str):
            raise MissingKey(f"{prefix}.reasoning.key_drivers")
        value = raw.get("adjusted_forecast_value")
        if not _is_real(value):
            raise MissingKey(f"{prefix}.adjusted_forecast_value")
        steps.append(MicroStep(ts, date_s, day_info, label, drivers, float(value)))
    if [s.timestamp for s in steps] != list(range(1, horizon + 1)):
        raise HorizonMismatch(horizon, len(steps))
    return MicroOutlook(tuple(steps))


def format_micro_json(outlook: MicroOutlook) -> str:
    payload = {
        "timestamp_forecasts": [
            {
                "timestamp": s.timestamp,
                "date": s.date,
                "day_info": s.day_info,
                "reasoning": {
                    "movement_label": s.movement_label,
                    "key_drivers": s.key_drivers,
                },
                "adjusted_forecast_value": s.adjusted_forecast_value,
            }
            for s in outlook.steps
        ]
    }
    return json.dumps(payload, indent=2, ensure_ascii=False)


# --- bare prediction tag (CoT baseline) --------------------------------------


def parse_prediction_tag(text: str, horizon: int) -> list[float]:
    """Comma-separated reals inside the first <prediction> block."""
    payload, span = _first_tag(text, "prediction")
    values = _parse_csv_reals(payload, span)
    if len(values) != horizon:
        raise HorizonMismatch(horizon, len(values), span)
    return values


def format_prediction(values: list[float], reasoning: str = "") -> str:
    body = ", ".join(repr(v) for v in values)
    head = f"{reasoning}\n" if reasoning else ""
    return f"{head}<prediction>{body}</prediction>"


def reasoning_outside_prediction(text: str) -> str:
    """Everything around the first <prediction> block, for the trace."""
    start = text.find("<prediction>")
    end = text.find("</prediction>")
    if start < 0 or end < 0:
        return text.strip()
    return (text[:start] + text[end + len("</prediction>") :]).strip()


# --- calibration critique ----------------------------------------------------


@dataclass(frozen=True)
class CalibrationCritique:
    diagnosis: str
    guidelines: str


def parse_calibration(text: str) -> CalibrationCritique:
    """Extract <diagnosis> and <guidelines>, in either order; leading list
    numbering ("1.", "2.") is irrelevant because tags are located anywhere."""
    diagnosis, d_span = _first_tag(text, "diagnosis")
    guidelines, g_span = _first_tag(text, "guidelines")
    if not diagnosis.strip():
        raise MissingTag("diagnosis", d_span)
    if not guidelines.strip():
        raise MissingTag("guidelines", g_span)
    return CalibrationCritique(diagnosis.strip(), guidelines.strip())


def format_calibration(critique: CalibrationCritique) -> str:
    return (
        f"1. <diagnosis>{critique.diagnosis}</diagnosis>\n"
        f"2. <guidelines>{critique.guidelines}</guidelines>"
    )


# --- judge verdict ------------------------------------------------------------


class Winner(str, Enum):
    MODEL_A = "Model A"
    MODEL_B = "Model B"
    TIE = "Tie"


JUDGE_CRITERIA = (
    "domain_relevance",
    "event_relevance",
    "logic_to_number",
    "analytical_depth",
    "overall_preference",
)

_JUDGE_KEYS = {
    "domain_relevance": "domain_relevance_winner",
    "event_relevance": "event_relevance_winner",
    "logic_to_number": "logic_to_number_winner",
    "analytical_depth": "analytical_depth_winner",
    "overall_preference": "overall_preference",
}


@dataclass(frozen=True)
class JudgeVerdict:
    winners: dict[str, Winner]
    justification: str


def _normalize_winner(raw: object, key: str) -> Winner:
    if not isinstance(raw, str):
        raise MissingKey(key)
    folded = " ".join(raw.lower().split())
    mapping = {"model a": Winner.MODEL_A, "model b": Winner.MODEL_B, "tie": Winner.TIE}
    if folded not in mapping:
        raise BadWinnerString(f"{key}: {raw!r}")
    return mapping[folded]


def parse_judge(text: str) -> JudgeVerdict:
    """Strict JSON verdict; winner strings tolerate case/whitespace drift only."""
    root = _load_json(text)
    if not isinstance(root, dict):
        raise NotJson("verdict must be a JSON object")
    winners: dict[str, Winner] = {}
    for criterion, key in _JUDGE_KEYS.items():
        if key not in root:
            raise MissingKey(key)
        winners[criterion] = _normalize_winner(root[key], key)
    justification = root.get("justification")
    if not isinstance(justification, str) or not justification.strip():
        raise MissingKey("justification")
    return JudgeVerdict(winners, justification.strip())


def format_judge(verdict: JudgeVerdict) -> str:
    payload = {key: verdict.winners[criterion].value for criterion, key in _JUDGE_KEYS.items()}
    payload["justification"] = verdict.justification
    return json.dumps(payload, indent=2, ensure_ascii=False)


# --- structured timeline (context agent) --------------------------------------


@dataclass(frozen=True)
class TimelineEntry:
    date: str
    value: float
    content: str


_TIMELINE_HEAD = re.compile(r"^Date/Timestamp:\s*(.+?)\s*$", re.MULTILINE)


def _unbracket(text: str) -> str:
    text = text.strip()
    if len(text) >= 2 and text[0] == "[" and text[-1] == "]":
        return text[1:-1].strip()
    return text


def parse_timeline(text: str) -> list[TimelineEntry]:
    """Parse repeated Date/Timestamp / Value / Textual Content blocks."""
    heads = list(_TIMELINE_HEAD.finditer(text))
    if not heads:
        raise TimelineParseError("no 'Date/Timestamp:' blocks found")
    entries: list[TimelineEntry] = []
    for i, head in enumerate(heads):
        block_end = heads[i + 1].start() if i + 1 < len(heads) else len(text)
        block = text[head.end() : block_end]
        value_m = re.search(r"^Value:\s*(.+?)\s*$", block, re.MULTILINE)
        if not value_m:
            raise TimelineParseError(
                f"block {i}: missing 'Value:' line", (head.start(), block_end)
            )
        content_m = re.search(r"^Textual Content:[ \t]*", block, re.MULTILINE)
        if not content_m:
            raise TimelineParseError(
                f"block {i}: missing 'Textual Content:' line", (head.start(), block_end)
            )
        value = _parse_real(_unbracket(value_m.group(1)))
        content = block[content_m.end() :].strip()
        entries.append(TimelineEntry(_unbracket(head.group(1)), value, content))
    return entries


def format_timeline(entries: list[TimelineEntry]) -> str:
    blocks = [
        f"Date/Timestamp: {e.date}\nValue: {repr(e.value)}\nTextual Content: {e.content}"
        for e in entries
    ]
    return "\n\n".join(blocks)
