"""Command-line orchestration.

Commands: ``nexus forecast | baseline | evaluate | judge | synth``.
Configuration comes from a TOML file plus CLI overrides; the only
environment variable is the HTTP backend's auth token.

Exit codes: 1 config errors, 2 data errors, 3 backend errors, 4 parse
errors; 0 on success.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

try:
    import tomllib  # Python 3.11+
except ModuleNotFoundError:  # pragma: no cover - version-dependent import
    import tomli as tomllib

from . import records
from .agents import AgentBinding, PipelineConfig, cot_forecast, ground_truth_events_str, run_pipeline
from .calibration import CalibrationConfig, calibrate_entity
from .errors import (
    BackendError,
    ConfigError,
    DataError,
    DuplicateMethod,
    MetricError,
    NexusError,
    ParseError,
    PipelineError,
    SelfJudgeViolation,
    TaskSetMismatch,
    TemplateError,
    ValueDrift,
)
from .gateway import CallRecorder, HttpChatBackend, ReplayBackend, ScriptedBackend
from .ingest import (
    ForecastTask,
    SynthSpec,
    build_context,
    load_events,
    load_external_forecasts,
    load_series,
    make_tasks,
    strip_events,
    synth_context,
)
from .judging import MethodOutput, assign_positions, judge_pair, tally
from .metrics import SampleKey, aggregate
from .series import MultimodalContext
from .simulate import simulator_backend

SETTINGS = ("multimodal", "numerical_only")


# --- configuration ------------------------------------------------------------


@dataclass
class RunConfig:
    dataset: str = "synthetic"
    setting: str = "multimodal"
    out_dir: Path = Path("out")
    seed: int = 0
    workers: int = 4
    horizons: tuple[int, ...] = (4,)
    context_length: int = 24
    stride: int = 1
    window: int | None = None
    eval_start: date | None = None
    eval_end: date | None = None
    series_dir: Path | None = None
    entities: tuple[str, ...] = ()
    synthetic: dict | None = None
    calibration_enabled: bool = True
    n: int = 6
    k: float = 0.05
    min_support: float = 0.5
    backend_spec: str = "sim"
    model: str = "sim-model-1"
    temperature: float = 0.1
    max_output_tokens: int = 4096
    overrides: dict[str, dict] = field(default_factory=dict)
    cache_dir: Path | None = None
    disable_macro: bool = False
    disable_micro: bool = False
    disable_calibration: bool = False

    def validate(self) -> None:
        if self.setting not in SETTINGS:
            raise ConfigError(f"setting must be one of {SETTINGS}, got {self.setting!r}")
        if not self.horizons or any(h < 1 for h in self.horizons):
            raise ConfigError("horizons must be positive")
        if not 0.0 < self.k < 1.0:
            raise ConfigError(f"k must be in (0, 1), got {self.k}")
        if self.calibration_enabled and not self.disable_calibration and self.n < 2:
            raise ConfigError("n must be >= 2 when calibration is enabled")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if (self.window is None) == (self.eval_start is None or self.eval_end is None):
            raise ConfigError("give either eval.window or both eval.start and eval.end")
        if self.disable_macro and self.disable_micro:
            raise ConfigError("cannot disable both macro and micro outlooks")
        if self.series_dir is None and self.synthetic is None:
            raise ConfigError("configure either data.series_dir or [synthetic]")


def _parse_iso(raw: str, where: str) -> date:
    try:
        return date.fromisoformat(raw)
    except ValueError as exc:
        raise ConfigError(f"{where}: bad date {raw!r}") from exc


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    cfg = RunConfig()
    run = raw.get("run", {})
    cfg.dataset = run.get("dataset", cfg.dataset)
    cfg.setting = run.get("setting", cfg.setting)
    cfg.out_dir = Path(run.get("out_dir", cfg.out_dir))
    cfg.seed = int(run.get("seed", cfg.seed))
    cfg.workers = int(run.get("workers", cfg.workers))

    data = raw.get("data", {})
    if "series_dir" in data:
        cfg.series_dir = Path(data["series_dir"])
        cfg.entities = tuple(data.get("entities", ()))
        if not cfg.entities:
            raise ConfigError("data.entities must list entity ids for series_dir mode")
    cfg.synthetic = raw.get("synthetic")

    ev = raw.get("eval", {})
    cfg.horizons = tuple(int(h) for h in ev.get("horizons", cfg.horizons))
    cfg.context_length = int(ev.get("context_length", cfg.context_length))
    cfg.stride = int(ev.get("stride", cfg.stride))
    if "window" in ev:
        cfg.window = int(ev["window"])
    if "start" in ev:
        cfg.eval_start = _parse_iso(str(ev["start"]), "eval.start")
    if "end" in ev:
        cfg.eval_end = _parse_iso(str(ev["end"]), "eval.end")

    cal = raw.get("calibration", {})
    cfg.calibration_enabled = bool(cal.get("enabled", cfg.calibration_enabled))
    cfg.n = int(cal.get("n", cfg.n))
    cfg.k = float(cal.get("k", cfg.k))
    cfg.min_support = float(cal.get("min_support", cfg.min_support))

    llm = raw.get("llm", {})
    cfg.backend_spec = llm.get("backend", cfg.backend_spec)
    cfg.model = llm.get("model", cfg.model)
    cfg.temperature = float(llm.get("temperature", cfg.temperature))
    cfg.max_output_tokens = int(llm.get("max_output_tokens", cfg.max_output_tokens))
    cfg.overrides = llm.get("overrides", {})
    if "cache_dir" in llm:
        cfg.cache_dir = Path(llm["cache_dir"])
    return cfg


def apply_cli_overrides(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    if getattr(args, "backend", None):
        cfg.backend_spec = args.backend
    if getattr(args, "out", None):
        cfg.out_dir = Path(args.out)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "workers", None) is not None:
        cfg.workers = args.workers
    if getattr(args, "setting", None):
        cfg.setting = args.setting
    if getattr(args, "cache_dir", None):
        cfg.cache_dir = Path(args.cache_dir)
    cfg.disable_macro = bool(getattr(args, "disable_macro", False))
    cfg.disable_micro = bool(getattr(args, "disable_micro", False))
    cfg.disable_calibration = bool(getattr(args, "disable_calibration", False))
    return cfg


# --- backends -------------------------------------------------------------------


def build_backend(spec: str):
    """Backend specs: ``sim``, ``scripted:<path>``, ``replay:<dir>[:<fallback>]``,
    ``http:<endpoint-url>``."""
    if spec in ("sim", "simulated"):
        return simulator_backend()
    kind, _, rest = spec.partition(":")
    if kind == "scripted":
        if not rest:
            raise ConfigError("scripted backend needs a path: scripted:<path>")
        return _load_scripted(Path(rest))
    if kind == "replay":
        cache_dir, _, fallback = rest.partition(":")
        if not cache_dir:
            raise ConfigError("replay backend needs a directory: replay:<dir>[:<fallback>]")
        inner = build_backend(fallback) if fallback else None
        return ReplayBackend(cache_dir, fallback=inner)
    if kind in ("http", "https"):
        return HttpChatBackend(endpoint=spec)
    raise ConfigError(f"unknown backend spec {spec!r}")


def _load_scripted(path: Path) -> ScriptedBackend:
    if path.is_dir():
        path = path / "script.json"
    if not path.exists():
        raise DataError(f"scripted backend file not found: {path}")
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except ValueError as exc:
        raise ConfigError(f"{path}: invalid script JSON: {exc}") from exc
    if payload.get("builtin") == "simulator":
        return simulator_backend()
    if "rules" in payload:
        return ScriptedBackend(rules=[(r["match"], r["response"]) for r in payload["rules"]])
    if "responses" in payload:
        return ScriptedBackend(
            responses=list(payload["responses"]), cyclic=bool(payload.get("cyclic", False))
        )
    raise ConfigError(f"{path}: expected 'builtin', 'rules', or 'responses'")


def _pipeline_config(cfg: RunConfig, backend, guidelines: str | None) -> PipelineConfig:
    default = AgentBinding(
        backend=backend,
        model_id=cfg.model,
        temperature=cfg.temperature,
        max_output_tokens=cfg.max_output_tokens,
    )
    overrides = {}
    for template_id, spec in cfg.overrides.items():
        overrides[template_id] = AgentBinding(
            backend=backend,
            model_id=spec.get("model", cfg.model),
            temperature=float(spec.get("temperature", cfg.temperature)),
            max_output_tokens=int(spec.get("max_output_tokens", cfg.max_output_tokens)),
        )
    return PipelineConfig(
        default=default,
        overrides=overrides,
        enable_macro=not cfg.disable_macro,
        enable_micro=not cfg.disable_micro,
        guidelines=guidelines,
    )


# --- data loading -----------------------------------------------------------------


def _load_contexts(cfg: RunConfig) -> list[MultimodalContext]:
    contexts: list[MultimodalContext] = []
    if cfg.series_dir is not None:
        for entity in cfg.entities:
            series_path = cfg.series_dir / f"{entity}.csv"
            events_path = cfg.series_dir / f"{entity}.events.csv"
            try:
                series = load_series(series_path, entity)
            except FileNotFoundError as exc:
                raise DataError(f"missing series file: {series_path}") from exc
            events = None
            if cfg.setting == "multimodal":
                if not events_path.exists():
                    raise DataError(f"missing events file: {events_path}")
                events = load_events(events_path)
            contexts.append(
                build_context(series, events, "Weekly Activity Count", entity)
            )
    else:
        syn = dict(cfg.synthetic or {})
        count = int(syn.pop("entities", 2))
        for i in range(count):
            spec = SynthSpec(entity_id=f"synth_{i + 1:02d}", **_synth_kwargs(syn))
            contexts.append(synth_context(spec, seed=cfg.seed * 1000 + i))
    if cfg.setting == "numerical_only":
        contexts = [strip_events(c) for c in contexts]
    return contexts


def _synth_kwargs(syn: dict) -> dict:
    allowed = {
        "length",
        "trend",
        "seasonal_period",
        "seasonal_amplitude",
        "noise_sd",
        "event_rate",
        "base",
        "target_name",
        "domain_label",
    }
    unknown = set(syn) - allowed
    if unknown:
        raise ConfigError(f"unknown [synthetic] keys: {sorted(unknown)}")
    if "length" not in syn:
        raise ConfigError("[synthetic] needs a length")
    return syn


def _eval_bounds(cfg: RunConfig, context: MultimodalContext) -> tuple[date, date]:
    if cfg.window is not None:
        dates = context.series.dates
        if cfg.window > len(dates):
            raise DataError(
                f"eval window {cfg.window} exceeds series length {len(dates)}"
            )
        return dates[-cfg.window], dates[-1]
    return cfg.eval_start, cfg.eval_end


# --- forecast / baseline ---------------------------------------------------------


def _run_tasks(
    cfg: RunConfig,
    tasks: list[ForecastTask],
    runner,
    method: str,
    guidelines: str | None = None,
) -> int:
    def one(task: ForecastTask):
        recorder = CallRecorder()
        result = runner(task, recorder)
        record = records.task_record(
            task, result, recorder, method, cfg.dataset,
            ground_truth_events_str(task), guidelines,
        )
        records.write_task_record(cfg.out_dir, record)

    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        futures = [pool.submit(one, t) for t in tasks]
        for f in futures:
            f.result()
    return len(tasks)


def cmd_forecast(cfg: RunConfig) -> int:
    cfg.validate()
    backend = build_backend(cfg.backend_spec)
    total = 0
    for context in _load_contexts(cfg):
        eval_start, eval_end = _eval_bounds(cfg, context)
        for horizon in cfg.horizons:
            tasks = make_tasks(
                context, eval_start, eval_end, horizon, cfg.context_length, cfg.stride
            )
            guidelines = None
            if cfg.calibration_enabled and not cfg.disable_calibration:
                first_eval = tasks[0].origin_index + 1
                history = context.window(0, first_eval)
                outcome = calibrate_entity(
                    history,
                    CalibrationConfig(
                        pipeline=_pipeline_config(cfg, backend, None),
                        horizon=horizon,
                        context_length=cfg.context_length,
                        n=cfg.n,
                        k=cfg.k,
                        min_support=cfg.min_support,
                        workers=cfg.workers,
                    ),
                )
                if outcome.accepted:
                    guidelines = outcome.guidelines.text
                records.write_calibration(
                    cfg.out_dir,
                    cfg.dataset,
                    context.series.entity_id,
                    horizon,
                    tasks[0].setting,
                    outcome.to_json_dict(),
                )
            pipeline = _pipeline_config(cfg, backend, guidelines)
            total += _run_tasks(
                cfg, tasks, lambda t, r, p=pipeline: run_pipeline(t, p, r), "nexus",
                guidelines=guidelines,
            )
    print(f"forecast: wrote {total} task records under {cfg.out_dir}")
    return 0


def cmd_baseline(cfg: RunConfig) -> int:
    cfg.validate()
    backend = build_backend(cfg.backend_spec)
    pipeline = _pipeline_config(cfg, backend, None)
    total = 0
    for context in _load_contexts(cfg):
        eval_start, eval_end = _eval_bounds(cfg, context)
        for horizon in cfg.horizons:
            tasks = make_tasks(
                context, eval_start, eval_end, horizon, cfg.context_length, cfg.stride
            )
            total += _run_tasks(
                cfg, tasks, lambda t, r: cot_forecast(t, pipeline, r), "cot"
            )
    print(f"baseline: wrote {total} task records under {cfg.out_dir}")
    return 0


# --- evaluate ----------------------------------------------------------------------


def cmd_evaluate(run_dirs: list[str], out_dir: str, externals: list[str], baseline_method: str | None) -> int:
    rows = []
    for run_dir in run_dirs:
        for record in records.load_run_records(run_dir):
            t = record["task"]
            key = SampleKey(t["dataset"], t["setting"], t["horizon"], record["method"])
            rows.append((key, t["truth_values"], record["result"]["values"]))
    for spec in externals:
        rows.extend(_external_rows(spec, run_dirs))
    report = aggregate(rows)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json(), encoding="utf-8")
    (out / "report.md").write_text(report.to_markdown(baseline_method), encoding="utf-8")
    print(f"evaluate: wrote report.json and report.md under {out}")
    return 0


def _external_rows(spec: str, run_dirs: list[str]):
    """--external name:path[:entity] - comparison-only rows from a CSV of
    externally produced forecasts, matched to tasks by origin date."""
    parts = spec.split(":")
    if len(parts) < 2:
        raise ConfigError(f"--external expects name:path[:entity], got {spec!r}")
    name, path = parts[0], parts[1]
    entity = parts[2] if len(parts) > 2 else None
    try:
        forecasts = load_external_forecasts(path)
    except FileNotFoundError as exc:
        raise DataError(f"external forecast file not found: {path}") from exc
    rows = []
    seen: set[str] = set()
    for run_dir in run_dirs:
        for record in records.load_run_records(run_dir):
            t = record["task"]
            if entity is not None and t["entity"] != entity:
                continue
            if t["task_id"] in seen:  # same task may appear in several runs
                continue
            origin = date.fromisoformat(t["origin_date"])
            if origin not in forecasts:
                continue
            by_step = forecasts[origin]
            try:
                predicted = [by_step[s] for s in range(1, t["horizon"] + 1)]
            except KeyError:
                continue
            seen.add(t["task_id"])
            key = SampleKey(t["dataset"], t["setting"], t["horizon"], name)
            rows.append((key, t["truth_values"], predicted))
    return rows


# --- judge --------------------------------------------------------------------------


def cmd_judge(
    run_a: str,
    run_b: str,
    out_dir: str,
    seed: int,
    backend_spec: str,
    judge_model: str,
    sample: int | None,
) -> int:
    recs_a = {r["task"]["task_id"]: r for r in records.load_run_records(run_a)}
    recs_b = {r["task"]["task_id"]: r for r in records.load_run_records(run_b)}
    if set(recs_a) != set(recs_b):
        only_a = sorted(set(recs_a) - set(recs_b))[:3]
        only_b = sorted(set(recs_b) - set(recs_a))[:3]
        raise TaskSetMismatch(f"runs cover different tasks (e.g. {only_a} vs {only_b})")

    generator_models = {
        ex["model_id"] for r in list(recs_a.values()) + list(recs_b.values()) for ex in r["exchanges"]
    }
    judge_binding = AgentBinding(backend=build_backend(backend_spec), model_id=judge_model)
    if judge_model in generator_models:
        raise SelfJudgeViolation(
            f"judge model {judge_model!r} generated some outputs under test"
        )

    task_ids = sorted(recs_a)
    if sample is not None:
        task_ids = task_ids[:sample]

    verdicts = []
    verdict_payload = []
    method_a = method_b = None
    for idx, task_id in enumerate(task_ids):
        ra, rb = recs_a[task_id], recs_b[task_id]
        method_a, method_b = ra["method"], rb["method"]
        if method_a == method_b:
            raise DuplicateMethod(f"both runs are method {method_a!r}")
        left = MethodOutput(method_a, ra["result"]["reasoning"], tuple(ra["result"]["values"]))
        right = MethodOutput(method_b, rb["result"]["reasoning"], tuple(rb["result"]["values"]))
        pair = assign_positions(
            ra["task"]["ground_truth_events"], left, right, seed=seed + idx
        )
        verdict = judge_pair(pair, judge_binding, sorted(generator_models))
        verdicts.append(verdict)
        verdict_payload.append(
            {
                "task_id": task_id,
                "assignment": dict(verdict.assignment),
                "winners": verdict.winners,
                "justification": verdict.justification,
            }
        )

    table = tally(verdicts, subject=method_a, opponent=method_b)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "verdicts.json").write_text(
        json.dumps(verdict_payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )
    (out / "tally.json").write_text(
        json.dumps(table.to_json_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )
    (out / "tally.md").write_text(table.to_markdown() + "\n", encoding="utf-8")
    print(f"judge: {len(verdicts)} verdicts; tally under {out}")
    return 0


# --- synth ---------------------------------------------------------------------------


def cmd_synth(args: argparse.Namespace) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(args.entities):
        spec = SynthSpec(
            entity_id=f"synth_{i + 1:02d}",
            length=args.length,
            trend=args.trend,
            seasonal_period=args.seasonal_period,
            noise_sd=args.noise_sd,
            event_rate=args.event_rate,
        )
        context = synth_context(spec, seed=args.seed + i)
        with (out / f"{spec.entity_id}.csv").open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["date", "value"])
            for d, v in context.series.points:
                writer.writerow([d.isoformat(), repr(v)])
        with (out / f"{spec.entity_id}.events.csv").open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["date", "text"])
            for d, t in context.events.entries:
                writer.writerow([d.isoformat(), t])
    print(f"synth: wrote {args.entities} entities under {out}")
    return 0


# --- entry point -----------------------------------------------------------------------


def _add_run_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="TOML run configuration")
    p.add_argument("--backend", help="backend spec override (sim, scripted:…, replay:…, http:…)")
    p.add_argument("--out", help="output directory override")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--setting", choices=SETTINGS)
    p.add_argument("--cache-dir", dest="cache_dir")
    p.add_argument("--disable-macro", action="store_true")
    p.add_argument("--disable-micro", action="store_true")
    p.add_argument("--disable-calibration", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nexus", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    _add_run_args(sub.add_parser("forecast", help="run the full agent pipeline"))
    _add_run_args(sub.add_parser("baseline", help="run the chain-of-thought baseline"))

    ev = sub.add_parser("evaluate", help="build accuracy reports from run records")
    ev.add_argument("--run", action="append", required=True, dest="runs")
    ev.add_argument("--out", required=True)
    ev.add_argument("--external", action="append", default=[], help="name:path[:entity]")
    ev.add_argument("--baseline-method", dest="baseline_method")

    jg = sub.add_parser("judge", help="pairwise reasoning comparison of two runs")
    jg.add_argument("--run-a", required=True)
    jg.add_argument("--run-b", required=True)
    jg.add_argument("--out", required=True)
    jg.add_argument("--seed", type=int, default=0)
    jg.add_argument("--backend", default="sim")
    jg.add_argument("--judge-model", default="sim-judge-1")
    jg.add_argument("--sample", type=int)

    sy = sub.add_parser("synth", help="generate synthetic series/event CSVs")
    sy.add_argument("--out", required=True)
    sy.add_argument("--entities", type=int, default=2)
    sy.add_argument("--length", type=int, default=80)
    sy.add_argument("--trend", type=float, default=0.4)
    sy.add_argument("--seasonal-period", type=int, default=8, dest="seasonal_period")
    sy.add_argument("--noise-sd", type=float, default=1.5, dest="noise_sd")
    sy.add_argument("--event-rate", type=float, default=0.15, dest="event_rate")
    sy.add_argument("--seed", type=int, default=0)

    return parser


_EXIT_CODES = (
    (ConfigError, 1),
    (TemplateError, 1),
    (SelfJudgeViolation, 1),
    (DuplicateMethod, 1),
    (DataError, 2),
    (MetricError, 2),
    (BackendError, 3),
    (ParseError, 4),
    (PipelineError, 4),
    (ValueDrift, 4),
)


def _exit_code_for(exc: NexusError) -> int:
    for klass, code in _EXIT_CODES:
        if isinstance(exc, klass):
            return code
    return 1


def _wrap_backend(cfg: RunConfig) -> None:
    if cfg.cache_dir is not None and not cfg.backend_spec.startswith("replay:"):
        cfg.backend_spec = f"replay:{cfg.cache_dir}:{cfg.backend_spec}"


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command in ("forecast", "baseline"):
            cfg = apply_cli_overrides(load_config(args.config), args)
            _wrap_backend(cfg)
            return cmd_forecast(cfg) if args.command == "forecast" else cmd_baseline(cfg)
        if args.command == "evaluate":
            return cmd_evaluate(args.runs, args.out, args.external, args.baseline_method)
        if args.command == "judge":
            return cmd_judge(
                args.run_a, args.run_b, args.out, args.seed,
                args.backend, args.judge_model, args.sample,
            )
        if args.command == "synth":
            return cmd_synth(args)
        raise ConfigError(f"unknown command {args.command!r}")
    except NexusError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())
