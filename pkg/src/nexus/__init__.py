"""Multi-agent LLM time-series forecasting.

The pipeline contextualizes a multimodal history, projects macro and micro
outlooks, synthesizes them into a final forecast, and self-calibrates via
backtest critiques gated on a hidden validation fold.  Everything runs
against pluggable chat backends, including fully deterministic scripted
ones for offline evaluation.
"""

from .series import EventStream, ForecastResult, MultimodalContext, TimeSeries
from .metrics import MetricReport, aggregate, mape, relative_improvement, rmse
from .ingest import ForecastTask, SynthSpec, make_tasks, synth_context, ts_features
from .gateway import (
    CallRecorder,
    HttpChatBackend,
    LlmRequest,
    LlmResponse,
    ReplayBackend,
    ScriptedBackend,
    cache_key,
    complete,
)
from .agents import AgentBinding, PipelineConfig, cot_forecast, run_pipeline
from .calibration import CalibrationConfig, calibrate_entity, gate, make_splits
from .judging import MethodOutput, assign_positions, judge_pair, tally
from .simulate import simulator_backend

__version__ = "0.1.0"

__all__ = [
    "AgentBinding",
    "CalibrationConfig",
    "CallRecorder",
    "EventStream",
    "ForecastResult",
    "ForecastTask",
    "HttpChatBackend",
    "LlmRequest",
    "LlmResponse",
    "MethodOutput",
    "MetricReport",
    "MultimodalContext",
    "PipelineConfig",
    "ReplayBackend",
    "ScriptedBackend",
    "SynthSpec",
    "TimeSeries",
    "aggregate",
    "assign_positions",
    "cache_key",
    "calibrate_entity",
    "complete",
    "cot_forecast",
    "gate",
    "judge_pair",
    "make_splits",
    "make_tasks",
    "mape",
    "relative_improvement",
    "rmse",
    "run_pipeline",
    "simulator_backend",
    "synth_context",
    "tally",
    "ts_features",
]
