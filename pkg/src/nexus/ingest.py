"""Data loading, rolling-origin task generation, and series features.

CSV formats: series files are ``date,value`` with ISO-8601 dates; event
files are ``date,text`` with RFC-4180 quoting.  External baseline forecasts
(for comparison-only report rows) are ``origin_date,step,value``.
"""

from __future__ import annotations

import csv
import math
import random
import statistics
from dataclasses import dataclass
from datetime import date, timedelta
from pathlib import Path

from .errors import (
    BadSpec,
    DuplicateDate,
    HistoryTooShort,
    MalformedCsv,
    NonFiniteValue,
    SeriesTooShort,
    WindowTooShort,
)
from .series import EventStream, MultimodalContext, TimeSeries

WEEK = timedelta(days=7)


# --- loaders ----------------------------------------------------------------


def _parse_date(raw: str, path: Path, line: int) -> date:
    try:
        return date.fromisoformat(raw.strip())
    except ValueError as exc:
        raise MalformedCsv(f"{path}:{line}: bad date {raw!r}") from exc


def load_series(path: str | Path, entity_id: str) -> TimeSeries:
    """Read a ``date,value`` CSV into a date-sorted series."""
    path = Path(path)
    rows: list[tuple[date, float]] = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header] != ["date", "value"]:
            raise MalformedCsv(f"{path}: expected header 'date,value', got {header!r}")
        for i, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise MalformedCsv(f"{path}:{i}: expected 2 fields, got {len(row)}")
            d = _parse_date(row[0], path, i)
            try:
                v = float(row[1])
            except ValueError as exc:
                raise MalformedCsv(f"{path}:{i}: bad value {row[1]!r}") from exc
            if not math.isfinite(v):
                raise NonFiniteValue(f"{path}:{i}: non-finite value {row[1]!r}")
            rows.append((d, v))
    if not rows:
        raise MalformedCsv(f"{path}: no data rows")
    rows.sort(key=lambda r: r[0])
    for (d1, _), (d2, _) in zip(rows, rows[1:]):
        if d1 == d2:
            raise DuplicateDate(f"{path}: duplicate date {d1}")
    return TimeSeries(entity_id, tuple(rows))


def load_events(path: str | Path) -> EventStream:
    """Read a ``date,text`` CSV; entries sharing a date are merged with a
    newline between their texts."""
    path = Path(path)
    merged: dict[date, list[str]] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, strict=True)
        try:
            header = next(reader, None)
            if header is None or [h.strip().lower() for h in header] != ["date", "text"]:
                raise MalformedCsv(f"{path}: expected header 'date,text', got {header!r}")
            for i, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != 2:
                    raise MalformedCsv(f"{path}:{i}: expected 2 fields, got {len(row)}")
                d = _parse_date(row[0], path, i)
                merged.setdefault(d, []).append(row[1])
        except csv.Error as exc:
            raise MalformedCsv(f"{path}: {exc}") from exc
    entries = tuple((d, "\n".join(texts)) for d, texts in sorted(merged.items()))
    return EventStream(entries)


def align_events(series: TimeSeries, events: EventStream) -> EventStream:
    """Snap each event to the latest series date at or before it.

    Weekly points anchor their week, so an event dated mid-week attaches to
    that week's point.  Events before the first point or more than one
    frequency step past the last point are dropped.  Texts landing on the
    same point are joined with newlines.
    """
    dates = series.dates
    merged: dict[date, list[str]] = {}
    for d, text in events.entries:
        if d < dates[0] or d >= dates[-1] + WEEK:
            continue
        anchor = max(sd for sd in dates if sd <= d)
        merged.setdefault(anchor, []).append(text)
    return EventStream(tuple((d, "\n".join(ts)) for d, ts in sorted(merged.items())))


def build_context(
    series: TimeSeries,
    events: EventStream | None,
    target_name: str,
    domain_label: str,
) -> MultimodalContext:
    aligned = align_events(series, events) if events is not None else None
    return MultimodalContext(series, aligned, target_name, domain_label)


def strip_events(context: MultimodalContext) -> MultimodalContext:
    """The numerical-only view of a multimodal context."""
    return MultimodalContext(context.series, None, context.target_name, context.domain_label)


def load_external_forecasts(path: str | Path) -> dict[date, dict[int, float]]:
    """Read an ``origin_date,step,value`` CSV of externally produced forecasts."""
    path = Path(path)
    out: dict[date, dict[int, float]] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        expected = ["origin_date", "step", "value"]
        if header is None or [h.strip().lower() for h in header] != expected:
            raise MalformedCsv(f"{path}: expected header 'origin_date,step,value'")
        for i, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise MalformedCsv(f"{path}:{i}: expected 3 fields")
            d = _parse_date(row[0], path, i)
            try:
                step, value = int(row[1]), float(row[2])
            except ValueError as exc:
                raise MalformedCsv(f"{path}:{i}: bad step/value") from exc
            if not math.isfinite(value):
                raise NonFiniteValue(f"{path}:{i}: non-finite value")
            out.setdefault(d, {})[step] = value
    return out


# --- rolling-origin tasks ---------------------------------------------------


@dataclass(frozen=True)
class ForecastTask:
    """One rolling-origin forecast problem.

    ``context`` holds exactly ``context_length`` points ending at the origin;
    truth fields carry the realized horizon for evaluation and judging and
    are never exposed to the forecasting prompts.
    """

    task_index: int
    context: MultimodalContext
    origin_index: int
    origin_date: date
    horizon: int
    context_length: int
    setting: str
    frequency: str = "weekly"
    truth_values: tuple[float, ...] = ()
    truth_dates: tuple[date, ...] = ()
    truth_events: tuple[tuple[date, str], ...] = ()

    @property
    def entity_id(self) -> str:
        return self.context.series.entity_id

    @property
    def task_id(self) -> str:
        return f"{self.entity_id}_h{self.horizon}_{self.setting}_t{self.task_index:03d}"


def make_tasks(
    context: MultimodalContext,
    eval_start: date,
    eval_end: date,
    horizon: int,
    context_length: int,
    stride: int = 1,
) -> list[ForecastTask]:
    """Rolling-origin tasks whose every forecast step lies in the window.

    With stride 1 the task count is W - horizon + 1 where W is the number of
    points inside [eval_start, eval_end].  No task context includes any point
    at or beyond its first forecast step.
    """
    if horizon < 1 or context_length < 1 or stride < 1:
        raise BadSpec("horizon, context_length, and stride must be positive")
    dates = context.series.dates
    window = [i for i, d in enumerate(dates) if eval_start <= d <= eval_end]
    if len(window) < horizon:
        raise WindowTooShort(
            f"evaluation window has {len(window)} points, horizon is {horizon}"
        )
    setting = "multimodal" if context.multimodal else "numerical_only"
    tasks: list[ForecastTask] = []
    for t_idx, offset in enumerate(range(0, len(window) - horizon + 1, stride)):
        first_step = window[offset]
        ctx_start = first_step - context_length
        if ctx_start < 0:
            raise HistoryTooShort(
                f"task at {dates[first_step]} needs {context_length} context points, "
                f"only {first_step} available"
            )
        truth_dates = tuple(dates[first_step : first_step + horizon])
        truth_events: tuple[tuple[date, str], ...] = ()
        if context.events is not None:
            truth_events = context.events.between(truth_dates[0], truth_dates[-1]).entries
        tasks.append(
            ForecastTask(
                task_index=t_idx,
                context=context.window(ctx_start, first_step),
                origin_index=first_step - 1,
                origin_date=dates[first_step - 1],
                horizon=horizon,
                context_length=context_length,
                setting=setting,
                frequency=context.series.frequency,
                truth_values=tuple(context.series.values[first_step : first_step + horizon]),
                truth_dates=truth_dates,
                truth_events=truth_events,
            )
        )
    return tasks


# --- basic series features --------------------------------------------------


@dataclass(frozen=True)
class BasicFeatures:
    count: int
    first_date: date
    last_date: date
    mean: float
    std: float
    min: float
    max: float
    last_value: float
    trend_slope: float
    top_autocorr_lag: int
    recent_change_4step: float


def ts_features(series: TimeSeries) -> BasicFeatures:
    """Summary statistics, OLS trend slope, and the dominant autocorrelation lag."""
    values = series.values
    n = len(values)
    if n < 8:
        raise SeriesTooShort(f"need >= 8 points for features, got {n}")
    slope = statistics.linear_regression(range(n), values).slope
    return BasicFeatures(
        count=n,
        first_date=series.dates[0],
        last_date=series.dates[-1],
        mean=statistics.fmean(values),
        std=statistics.pstdev(values),
        min=min(values),
        max=max(values),
        last_value=values[-1],
        trend_slope=slope,
        top_autocorr_lag=_top_autocorr_lag(values),
        recent_change_4step=values[-1] - values[-5],
    )


def _top_autocorr_lag(values: list[float]) -> int:
    """Argmax of the sample autocorrelation over lags 2..n//2 (1 when the
    series has no variance)."""
    n = len(values)
    mean = statistics.fmean(values)
    centered = [v - mean for v in values]
    denom = math.fsum(c * c for c in centered)
    if denom == 0.0:
        return 1
    best_lag, best_r = 1, -math.inf
    for lag in range(2, n // 2 + 1):
        r = math.fsum(centered[t] * centered[t - lag] for t in range(lag, n)) / denom
        if r > best_r:
            best_lag, best_r = lag, r
    return best_lag


def format_features(bf: BasicFeatures) -> str:
    """Render features as the bullet block injected into the context prompt."""
    return "\n".join(
        [
            f"- Count: {bf.count} points from {bf.first_date.isoformat()} to {bf.last_date.isoformat()}",
            f"- Mean: {bf.mean:.4f} | Std: {bf.std:.4f} | Min: {bf.min:.4f} | Max: {bf.max:.4f}",
            f"- Last value: {bf.last_value:.4f}",
            f"- Trend slope (per step): {bf.trend_slope:.4f}",
            f"- Strongest autocorrelation lag: {bf.top_autocorr_lag} steps",
            f"- Recent 4-step change: {bf.recent_change_4step:.4f}",
        ]
    )


# --- synthetic fixtures -----------------------------------------------------

_EVENT_UP = (
    "A regional promotion and favorable coverage drove an unexpected surge "
    "of roughly {pct:.1f}% this week."
)
_EVENT_DOWN = (
    "A supply disruption and logistics outage pulled activity down by "
    "roughly {pct:.1f}% this week."
)


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for a deterministic synthetic multimodal context."""

    length: int
    trend: float = 0.0
    seasonal_period: int = 0
    seasonal_amplitude: float = 10.0
    noise_sd: float = 0.0
    event_rate: float = 0.0
    base: float = 100.0
    start: date = date(2024, 1, 1)
    entity_id: str = "synthetic"
    target_name: str = "Weekly Activity Count"
    domain_label: str = "Synthetic Retail Region"

    def validate(self) -> None:
        if self.length < 16:
            raise BadSpec(f"length must be >= 16, got {self.length}")
        if self.noise_sd < 0:
            raise BadSpec("noise_sd must be nonnegative")
        if not 0.0 <= self.event_rate <= 1.0:
            raise BadSpec("event_rate must be in [0, 1]")
        if self.seasonal_period < 0 or self.seasonal_period == 1:
            raise BadSpec("seasonal_period must be 0 or >= 2")


def synth_context(spec: SynthSpec, seed: int) -> MultimodalContext:
    """Deterministic synthetic context: trend + seasonality + noise, with
    templated event sentences tied to injected shocks."""
    spec.validate()
    rng = random.Random(seed)
    points: list[tuple[date, float]] = []
    events: list[tuple[date, str]] = []
    for i in range(spec.length):
        d = spec.start + i * WEEK
        v = spec.base + spec.trend * i
        if spec.seasonal_period:
            v += spec.seasonal_amplitude * math.sin(2 * math.pi * i / spec.seasonal_period)
        v += rng.gauss(0.0, spec.noise_sd)
        if spec.event_rate and rng.random() < spec.event_rate:
            direction = 1 if rng.random() < 0.5 else -1
            magnitude = rng.uniform(0.03, 0.10) * max(abs(v), 1.0)
            v += direction * magnitude
            pct = 100.0 * magnitude / max(abs(v), 1.0)
            template = _EVENT_UP if direction > 0 else _EVENT_DOWN
            events.append((d, template.format(pct=pct)))
        points.append((d, v))
    series = TimeSeries(spec.entity_id, tuple(points))
    return MultimodalContext(series, EventStream(tuple(events)), spec.target_name, spec.domain_label)


# --- evaluation configuration -----------------------------------------------


@dataclass(frozen=True)
class EvalConfig:
    """Windowing parameters for one dataset."""

    horizons: tuple[int, ...]
    context_length: int
    eval_start: date
    eval_end: date
    stride: int = 1

    def __post_init__(self):
        if not self.horizons or any(h < 1 for h in self.horizons):
            raise BadSpec("horizons must be positive")
        if self.stride < 1:
            raise BadSpec("stride must be >= 1")
