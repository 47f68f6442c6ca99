"""Run-record persistence.

Layout: ``<out>/<dataset>/<entity>/<horizon>/<setting>/task_<i>.json`` plus
``calibration.json`` next to the tasks.  Records carry the task spec, every
prompt/response exchange, and the final result; volatile response fields
(latency, cache hits) are excluded so identical runs produce identical
bytes regardless of worker count or cache state.
"""

from __future__ import annotations

import json
from pathlib import Path

from .errors import MissingRuns
from .gateway import CallRecorder
from .ingest import ForecastTask
from .series import ForecastResult


def _dump(payload: dict, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )


_STAGE_RANK = {"contextualize": 0, "macro": 1, "micro": 2, "synthesize": 3, "cot": 4}


def _stage_rank(stage: str) -> int:
    if stage in _STAGE_RANK:
        return _STAGE_RANK[stage]
    if stage.startswith("critique_fold_"):
        return 50 + int(stage.rsplit("_", 1)[1])
    if stage == "consolidate":
        return 90
    if stage == "judge":
        return 95
    return 99


def task_dir(out_dir: Path, dataset: str, entity: str, horizon: int, setting: str) -> Path:
    return Path(out_dir) / dataset / entity / str(horizon) / setting


def task_record(
    task: ForecastTask,
    result: ForecastResult,
    recorder: CallRecorder,
    method: str,
    dataset: str,
    ground_truth_events: str,
    guidelines: str | None = None,
) -> dict:
    context = task.context
    return {
        "task": {
            "task_id": task.task_id,
            "task_index": task.task_index,
            "dataset": dataset,
            "entity": task.entity_id,
            "origin_index": task.origin_index,
            "origin_date": task.origin_date.isoformat(),
            "horizon": task.horizon,
            "context_length": task.context_length,
            "setting": task.setting,
            "frequency": task.frequency,
            "target_name": context.target_name,
            "domain_label": context.domain_label,
            "context_points": [
                {"date": d.isoformat(), "value": v} for d, v in context.series.points
            ],
            "context_events": [
                {"date": d.isoformat(), "text": t}
                for d, t in (context.events.entries if context.events else ())
            ],
            "truth_dates": [d.isoformat() for d in task.truth_dates],
            "truth_values": list(task.truth_values),
            "ground_truth_events": ground_truth_events,
        },
        "method": method,
        "guidelines": guidelines,
        # stable-sorted into pipeline order: concurrent outlook stages land in
        # the recorder in scheduling order, which must not leak into the bytes
        "exchanges": [
            {
                "stage": ex.stage,
                "cache_key": ex.cache_key,
                "backend_id": ex.request.backend_id,
                "model_id": ex.request.model_id,
                "system_prompt": ex.request.system_prompt,
                "user_prompt": ex.request.user_prompt,
                "response_text": ex.response.text,
                "input_tokens": ex.response.input_tokens,
                "output_tokens": ex.response.output_tokens,
                "repair": ex.repair,
            }
            for ex in sorted(recorder.exchanges, key=lambda e: _stage_rank(e.stage))
        ],
        "result": {
            "values": list(result.values),
            "reasoning": result.reasoning,
            "trace": result.trace,
        },
    }


def write_task_record(out_dir: Path, record: dict) -> Path:
    t = record["task"]
    path = task_dir(out_dir, t["dataset"], t["entity"], t["horizon"], t["setting"])
    path = path / f"task_{t['task_index']:03d}.json"
    _dump(record, path)
    return path


def write_calibration(out_dir: Path, dataset: str, entity: str, horizon: int, setting: str, payload: dict) -> Path:
    path = task_dir(out_dir, dataset, entity, horizon, setting) / "calibration.json"
    _dump(payload, path)
    return path


def load_run_records(run_dir: str | Path) -> list[dict]:
    """All task records under a run directory, ordered by task id."""
    run_dir = Path(run_dir)
    paths = sorted(run_dir.rglob("task_*.json"))
    if not paths:
        raise MissingRuns(f"no task records under {run_dir}")
    records = [json.loads(p.read_text(encoding="utf-8")) for p in paths]
    records.sort(key=lambda r: (r["task"]["dataset"], r["task"]["task_id"]))
    return records
