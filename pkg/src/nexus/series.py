"""Core value types: numeric history, aligned event text, and forecast output."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import date

from .errors import NonFiniteValue, DataError


@dataclass(frozen=True)
class TimeSeries:
    """A univariate numeric history for one entity.

    Invariants: nonempty, dates strictly increasing, all values finite.
    """

    entity_id: str
    points: tuple[tuple[date, float], ...]
    frequency: str = "weekly"

    def __post_init__(self):
        if not self.points:
            raise DataError(f"series {self.entity_id!r} is empty")
        prev = None
        for d, v in self.points:
            if prev is not None and d <= prev:
                raise DataError(
                    f"series {self.entity_id!r}: dates not strictly increasing at {d}"
                )
            prev = d
            if not math.isfinite(v):
                raise NonFiniteValue(f"series {self.entity_id!r}: non-finite value at {d}")

    def __len__(self) -> int:
        return len(self.points)

    @property
    def dates(self) -> list[date]:
        return [d for d, _ in self.points]

    @property
    def values(self) -> list[float]:
        return [v for _, v in self.points]

    def slice(self, start: int, stop: int) -> "TimeSeries":
        return TimeSeries(self.entity_id, self.points[start:stop], self.frequency)


@dataclass(frozen=True)
class EventStream:
    """Chronological unstructured text entries aligned to series dates."""

    entries: tuple[tuple[date, str], ...]

    def __post_init__(self):
        prev = None
        for d, _ in self.entries:
            if prev is not None and d <= prev:
                raise DataError(f"event dates not strictly increasing at {d}")
            prev = d

    def __len__(self) -> int:
        return len(self.entries)

    def text_for(self, d: date) -> str | None:
        for ed, text in self.entries:
            if ed == d:
                return text
        return None

    def between(self, start: date, end: date) -> "EventStream":
        return EventStream(tuple((d, t) for d, t in self.entries if start <= d <= end))


@dataclass(frozen=True)
class MultimodalContext:
    """Aligned numeric history and optional per-timestep text for one entity.

    When events are present, every event date must appear among the series
    dates (alignment is established upstream at load time).
    """

    series: TimeSeries
    events: EventStream | None
    target_name: str
    domain_label: str

    def __post_init__(self):
        if self.events is not None:
            dates = set(self.series.dates)
            for d, _ in self.events.entries:
                if d not in dates:
                    raise DataError(f"event date {d} has no matching series point")

    @property
    def multimodal(self) -> bool:
        return self.events is not None

    def window(self, start: int, stop: int) -> "MultimodalContext":
        """Context restricted to series points [start, stop)."""
        sub = self.series.slice(start, stop)
        ev = None
        if self.events is not None:
            ev = self.events.between(sub.dates[0], sub.dates[-1])
        return MultimodalContext(sub, ev, self.target_name, self.domain_label)


@dataclass
class ForecastResult:
    """Final forecast values, the narrative that justifies them, and the
    identifiers of every LLM exchange that produced them (stage -> cache keys)."""

    values: list[float]
    reasoning: str
    trace: dict[str, list[str]] = field(default_factory=dict)

    def __post_init__(self):
        for v in self.values:
            if not math.isfinite(v):
                raise NonFiniteValue("forecast contains a non-finite value")
