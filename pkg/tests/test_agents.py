from __future__ import annotations

from datetime import date

import pytest

from nexus.agents import (
    AgentBinding,
    GUIDELINES_HEADING,
    MacroOutlook,
    NOT_AVAILABLE,
    NO_EVENTS,
    PipelineConfig,
    StructuredTimeline,
    contextualize,
    cot_forecast,
    ground_truth_events_str,
    history_text_str,
    macro_forecast,
    micro_forecast,
    run_pipeline,
    synthesize,
)
from nexus.errors import ConfigError, PipelineError
from nexus.gateway import CallRecorder, ReplayBackend, ScriptedBackend
from nexus.ingest import make_tasks
from nexus.parsers import MicroOutlook, MicroStep, TimelineEntry, format_micro_json
from nexus.simulate import simulator_backend

from conftest import context_from


def make_task(values=None, horizon=3, context_length=8, events=None):
    values = values if values is not None else [100.0 + i for i in range(20)]
    context = context_from(values, events=events)
    dates = context.series.dates
    return make_tasks(
        context, dates[-horizon], dates[-1], horizon, context_length
    )[0]


def config_for(backend, **kw) -> PipelineConfig:
    return PipelineConfig(default=AgentBinding(backend=backend, model_id="m1"), **kw)


def timeline_reply(task) -> str:
    blocks = [
        f"Date/Timestamp: {d.isoformat()}\nValue: {v!r}\nTextual Content: steady week"
        for d, v in task.context.series.points
    ]
    return "\n\n".join(blocks)


def timeline_for(task) -> StructuredTimeline:
    return StructuredTimeline(
        tuple(
            TimelineEntry(d.isoformat(), v, "steady week")
            for d, v in task.context.series.points
        )
    )


class TestContextualize:
    def test_three_point_context_three_entries(self):
        task = make_task(values=[100.0, 101.0, 102.0, 103.0], horizon=1, context_length=3)
        backend = ScriptedBackend(responses=[timeline_reply(task)])
        timeline = contextualize(task, config_for(backend))
        assert len(timeline.entries) == 3
        assert [e.value for e in timeline.entries] == [100.0, 101.0, 102.0]

    def test_value_drift_rejected(self):
        task = make_task(values=[100.0, 101.0, 102.0, 103.0], horizon=1, context_length=3)
        bad = timeline_reply(task).replace("Value: 100.0", "Value: 101.0", 1)
        backend = ScriptedBackend(responses=[bad, bad])
        with pytest.raises(PipelineError) as err:
            contextualize(task, config_for(backend))
        assert "drifted" in str(err.value)

    def test_cardinality_mismatch_rejected(self):
        task = make_task(horizon=2, context_length=6)
        partial = "\n\n".join(timeline_reply(task).split("\n\n")[:-1])
        backend = ScriptedBackend(responses=[partial, partial])
        with pytest.raises(PipelineError):
            contextualize(task, config_for(backend))

    def test_numerical_only_prompt_has_no_event_lines(self):
        task = make_task(horizon=2, context_length=6)
        recorder = CallRecorder()
        backend = ScriptedBackend(responses=[timeline_reply(task)])
        contextualize(task, config_for(backend), recorder)
        prompt = recorder.exchanges[0].request.user_prompt
        assert "Date: " in prompt
        assert "  " not in prompt.split("**Historical Data (Text & Values):**")[1].split("**Output:**")[0].replace("\n\n", "\n")

    def test_repair_retry_recovers(self):
        task = make_task(values=[100.0, 101.0, 102.0], horizon=1, context_length=2)
        good = timeline_reply(task)
        backend = ScriptedBackend(responses=["garbage with no blocks", good])
        recorder = CallRecorder()
        timeline = contextualize(task, config_for(backend), recorder)
        assert len(timeline.entries) == 2
        flags = [ex.repair for ex in recorder.exchanges]
        assert flags == [False, True]
        assert "failed validation" in recorder.exchanges[1].request.user_prompt


class TestMacroForecast:
    def test_horizon_values(self):
        task = make_task(horizon=4, context_length=8)
        reply = "<reasoning>up</reasoning><forecasted_values>[1, 2, 3, 4]</forecasted_values>"
        backend = ScriptedBackend(responses=[reply])
        macro = macro_forecast(timeline_for(task), task, config_for(backend))
        assert macro.values == (1.0, 2.0, 3.0, 4.0)
        assert macro.narrative == "up"

    def test_wrong_count_fails_after_repair(self):
        task = make_task(horizon=4)
        reply = "<reasoning>r</reasoning><forecasted_values>[1, 2, 3, 4, 5]</forecasted_values>"
        backend = ScriptedBackend(responses=[reply, reply])
        with pytest.raises(PipelineError):
            macro_forecast(timeline_for(task), task, config_for(backend))


class TestMicroForecast:
    def test_scripted_json(self):
        task = make_task(horizon=2)
        outlook = MicroOutlook(
            steps=tuple(
                MicroStep(i + 1, "2024-06-01", "d", "Up", "k", 10.0 + i) for i in range(2)
            )
        )
        backend = ScriptedBackend(responses=[format_micro_json(outlook)])
        got = micro_forecast(timeline_for(task), task, config_for(backend))
        assert got.values == [10.0, 11.0]
        assert got.steps[0].movement_label == "Up"

    def test_simulator_dates_follow_weekly_frequency(self):
        task = make_task(horizon=3)
        got = micro_forecast(timeline_for(task), task, config_for(simulator_backend()))
        last = task.context.series.dates[-1]
        expected = [(last.toordinal() + 7 * (i + 1)) for i in range(3)]
        assert [date.fromisoformat(s.date).toordinal() for s in got.steps] == expected


SYNTH_REPLY = "<reasoning>blend</reasoning><forecasted_values>[5, 6, 7]</forecasted_values>"


class TestSynthesize:
    def _run(self, guidelines=None, macro=True, micro=True):
        task = make_task(horizon=3)
        recorder = CallRecorder()
        backend = ScriptedBackend(responses=[SYNTH_REPLY])
        macro_outlook = MacroOutlook((1.0, 2.0, 3.0), "macro says up") if macro else None
        micro_outlook = (
            MicroOutlook(
                steps=tuple(
                    MicroStep(i + 1, "2024-06-01", "d", "Stable", "k", 2.0) for i in range(3)
                )
            )
            if micro
            else None
        )
        result = synthesize(
            timeline_for(task), macro_outlook, micro_outlook, guidelines, task,
            config_for(backend), recorder,
        )
        prompt = recorder.exchanges[-1].request.user_prompt
        return result, prompt

    def test_no_guidelines_no_block(self):
        result, prompt = self._run(guidelines=None)
        assert result.values == [5.0, 6.0, 7.0]
        assert GUIDELINES_HEADING not in prompt
        assert "{guidelines_section}" not in prompt

    def test_guidelines_verbatim(self):
        text = "Anchor to the latest level; damp trends."
        _, prompt = self._run(guidelines=text)
        assert GUIDELINES_HEADING in prompt
        assert text in prompt

    def test_micro_disabled_renders_sentinel(self):
        _, prompt = self._run(micro=False)
        section = prompt.split("3. Micro-Reasoning Breakdown")[1]
        assert NOT_AVAILABLE in section

    def test_macro_disabled_renders_sentinel(self):
        _, prompt = self._run(macro=False)
        section = prompt.split("2. Macro-Reasoning Outlook")[1].split("3. Micro")[0]
        assert NOT_AVAILABLE in section

    def test_both_missing_rejected(self):
        task = make_task(horizon=3)
        with pytest.raises(ConfigError):
            synthesize(
                timeline_for(task), None, None, None, task,
                config_for(ScriptedBackend(responses=[SYNTH_REPLY])),
            )


class TestCotForecast:
    def test_prediction_values(self):
        task = make_task(horizon=3)
        backend = ScriptedBackend(responses=["thinking\n<prediction>1, 2, 3</prediction>"])
        result = cot_forecast(task, config_for(backend))
        assert result.values == [1.0, 2.0, 3.0]
        assert result.reasoning == "thinking"

    def test_numerical_only_placeholder(self):
        task = make_task(horizon=2)
        recorder = CallRecorder()
        backend = ScriptedBackend(responses=["<prediction>1, 2</prediction>"])
        cot_forecast(task, config_for(backend), recorder)
        assert NO_EVENTS in recorder.exchanges[0].request.user_prompt

    def test_multimodal_events_in_prompt(self):
        events = {i: f"event {i}" for i in (3, 5)}
        task = make_task(values=[100 + i for i in range(12)], horizon=2, events=events)
        recorder = CallRecorder()
        backend = ScriptedBackend(responses=["<prediction>1, 2</prediction>"])
        cot_forecast(task, config_for(backend), recorder)
        prompt = recorder.exchanges[0].request.user_prompt
        assert "event 3" in prompt and "event 5" in prompt

    def test_horizon_mismatch_after_repair(self):
        task = make_task(horizon=3)
        bad = "<prediction>1, 2</prediction>"
        backend = ScriptedBackend(responses=[bad, bad])
        with pytest.raises(PipelineError):
            cot_forecast(task, config_for(backend))


class TestRunPipeline:
    def test_final_values_come_from_synthesizer(self):
        task = make_task(horizon=3)
        recorder = CallRecorder()
        result = run_pipeline(task, config_for(simulator_backend()), recorder)
        synth = next(ex for ex in recorder.exchanges if ex.stage == "synthesize")
        from nexus.parsers import parse_tagged_forecast

        assert result.values == list(parse_tagged_forecast(synth.response.text, 3).values)

    def test_trace_completeness_full_config(self):
        task = make_task(horizon=3)
        recorder = CallRecorder()
        result = run_pipeline(task, config_for(simulator_backend()), recorder)
        assert sorted(result.trace) == ["contextualize", "macro", "micro", "synthesize"]
        assert sum(len(v) for v in result.trace.values()) == 4
        assert len(recorder.exchanges) == 4

    def test_macro_only_variant_still_synthesizes(self):
        task = make_task(horizon=3)
        recorder = CallRecorder()
        result = run_pipeline(
            task, config_for(simulator_backend(), enable_micro=False), recorder
        )
        assert sorted(result.trace) == ["contextualize", "macro", "synthesize"]
        synth_prompt = next(
            ex.request.user_prompt for ex in recorder.exchanges if ex.stage == "synthesize"
        )
        assert NOT_AVAILABLE in synth_prompt
        assert len(result.values) == 3

    def test_disabling_both_rejected(self):
        with pytest.raises(ConfigError):
            config_for(simulator_backend(), enable_macro=False, enable_micro=False)

    def test_replay_cache_second_run_zero_new_calls(self, tmp_path):
        calls = {"n": 0}
        inner = simulator_backend()
        original = inner.complete

        def counting(request):
            calls["n"] += 1
            return original(request)

        inner.complete = counting
        backend = ReplayBackend(tmp_path, fallback=inner)
        task = make_task(horizon=3)
        first = run_pipeline(task, config_for(backend))
        after_first = calls["n"]
        second = run_pipeline(task, config_for(backend))
        assert calls["n"] == after_first
        assert first.values == second.values

    def test_deterministic_across_runs(self):
        task = make_task(horizon=4)
        a = run_pipeline(task, config_for(simulator_backend()))
        b = run_pipeline(task, config_for(simulator_backend()))
        assert a.values == b.values
        assert a.reasoning == b.reasoning
        assert a.trace == b.trace


class TestGroundTruthEvents:
    def test_multimodal_concatenates_window_events(self):
        events = {17: "window event"}
        task = make_task(values=[100 + i for i in range(20)], horizon=3, events=events)
        text = ground_truth_events_str(task)
        assert "window event" in text

    def test_numerical_only_movement_descriptions(self):
        task = make_task(values=[100.0] * 17 + [100.0, 102.0, 101.0], horizon=3)
        text = ground_truth_events_str(task)
        lines = text.split("\n")
        assert "held steady" in lines[0]
        assert "rose 2.0%" in lines[1]
        assert "fell 1.0%" in lines[2]

    def test_history_text_str_no_events(self):
        task = make_task(horizon=2)
        assert history_text_str(task.context) == NO_EVENTS
