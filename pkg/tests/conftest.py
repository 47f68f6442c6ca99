from __future__ import annotations

from datetime import date, timedelta

import pytest

from nexus.ingest import SynthSpec, synth_context
from nexus.series import EventStream, MultimodalContext, TimeSeries

WEEK = timedelta(days=7)
START = date(2024, 1, 1)


def weekly_series(values, entity_id="ent", start=START) -> TimeSeries:
    return TimeSeries(
        entity_id, tuple((start + i * WEEK, float(v)) for i, v in enumerate(values))
    )


def context_from(values, events=None, entity_id="ent", start=START) -> MultimodalContext:
    series = weekly_series(values, entity_id, start)
    stream = None
    if events is not None:
        stream = EventStream(
            tuple((start + i * WEEK, text) for i, text in sorted(events.items()))
        )
    return MultimodalContext(series, stream, "Weekly Activity Count", "Test Region")


@pytest.fixture
def noisy_context():
    return synth_context(
        SynthSpec(length=64, trend=0.5, seasonal_period=8, noise_sd=1.0, event_rate=0.2),
        seed=11,
    )
