"""Experiment runner: standalone, consecutive and intervened modes over N trials.

A trial returns per-task success and the two retention scores; ``aggregate``
folds trials into a MetricsTable and ``emit_report`` writes it as CSV, text and
a plotting series.
"""
from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from config import ConfigError
from database_setup import DB_NAME, load_trial_results, store_trial_results
from llm_backends import (
    DEFAULT_CHARS_PER_TOKEN,
    DEFAULT_CONTEXT_TOKENS,
    BackendError,
    GenerationParams,
    LLMBackend,
    TransportError,
    create_backend,
)
from orchestrator import (
    AgentContext,
    command_task,
    ground_truth,
    init,
    probe_retention,
    run_steps,
    write_events,
    write_transcript,
)
from task_registry import TASK_ORDER, get_registry
from world_sim import UnknownTask

logger = logging.getLogger(__name__)

MODES = ("standalone", "consecutive", "intervened")
SCORING = ("jaccard", "exact")
REPORT_HEADER = ["task", "model", "mode", "memory", "success", "task_retention", "env_retention"]


class HarnessError(Exception):
    pass


class NoValidTrials(HarnessError):
    pass


def _memory_flag(value) -> bool:
    if isinstance(value, bool):
        return value
    if value in ("on", "off"):
        return value == "on"
    raise ConfigError(f"memory must be on or off, not {value!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str = "standalone"
    trials: int = 50
    memory: bool = True
    backend: str = "mock:oracle"
    worker_backend: str | None = None
    params: GenerationParams = field(default_factory=GenerationParams)
    strict_single_action: bool = True
    seed: int = 0
    workers: int = 1
    tasks: tuple[str, ...] = TASK_ORDER
    retention_scoring: str = "jaccard"
    context_tokens: int = DEFAULT_CONTEXT_TOKENS
    chars_per_token: float = DEFAULT_CHARS_PER_TOKEN

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"Unknown mode {self.mode!r}; expected one of {', '.join(MODES)}")
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if self.retention_scoring not in SCORING:
            raise ConfigError(f"Unknown retention scoring {self.retention_scoring!r}")
        if not self.tasks:
            raise ConfigError("an experiment needs at least one task")
        try:
            ids = {get_registry().get(t).id for t in self.tasks}
        except UnknownTask as e:
            raise ConfigError(f"Unknown task: {e}") from e
        # registry order regardless of how the file lists them
        object.__setattr__(self, "tasks", tuple(t for t in TASK_ORDER if t in ids))

    @classmethod
    def from_dict(cls, data: dict) -> ExperimentConfig:
        data = dict(data)
        if "params" in data:
            data["params"] = GenerationParams.from_dict(data["params"])
        if "tasks" in data:
            data["tasks"] = tuple(data["tasks"])
        if "memory" in data:
            data["memory"] = _memory_flag(data["memory"])
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"Unknown experiment settings: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as e:
            raise ConfigError(str(e)) from e

    def to_dict(self) -> dict:
        data = asdict(self)
        data["tasks"] = list(self.tasks)
        return data

    @property
    def worker_spec(self) -> str:
        if self.worker_backend:
            return self.worker_backend
        return "mock:oracle" if self.backend.startswith("mock") else self.backend


@dataclass
class TaskResult:
    task: str
    success: bool
    task_retention: float
    env_retention: float
    failure_reasons: list[str] = field(default_factory=list)
    transcript_path: str | None = None


@dataclass
class TrialResult:
    trial_index: int
    seed: int
    mode: str
    memory: bool
    model: str
    valid: bool = True
    invalid_reason: str | None = None
    tasks: dict[str, TaskResult] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict) -> TrialResult:
        data = dict(data)
        tasks = [TaskResult(**t) for t in data.pop("tasks", [])]
        return cls(**data, tasks={t.task: t for t in tasks})


@dataclass(frozen=True)
class MetricsRow:
    task: str
    model: str
    mode: str
    memory: bool
    success: float
    task_retention: float
    env_retention: float
    valid_trials: int

    @property
    def arm(self) -> str:
        return f"{self.mode}/memory-{'on' if self.memory else 'off'}"


@dataclass
class MetricsTable:
    rows: list[MetricsRow]
    invalid_trials: int = 0

    @property
    def valid_trials(self) -> int:
        return max((r.valid_trials for r in self.rows), default=0)


def _as_sets(labels) -> set[str]:
    return {" ".join(label.split()).lower() for label in labels}


def score_retention(reported, truth, scoring: str = "jaccard") -> float:
    """Jaccard (or exact-match) score of reported labels against ground truth.

    Both sides are label lists, or dicts of container -> labels; dict keys are
    averaged with equal weight and a key missing on one side counts as empty.
    ``None`` stands for an unparseable report and scores zero.
    """
    if reported is None:
        return 0.0
    if isinstance(truth, dict):
        if not isinstance(reported, dict):
            return 0.0
        keys = set(truth) | set(reported)
        if not keys:
            return 1.0
        return sum(score_retention(reported.get(k, []), truth.get(k, []), scoring) for k in keys) / len(keys)

    got, want = _as_sets(reported), _as_sets(truth)
    if scoring == "exact":
        return 1.0 if got == want else 0.0
    union = got | want
    return len(got & want) / len(union) if union else 1.0


class _Trial:
    """State of one running trial: backends, the current context and the artifacts."""

    def __init__(self, config: ExperimentConfig, coordinator: LLMBackend, worker: LLMBackend,
                 trial_dir: Path | None):
        self.config = config
        self.coordinator = coordinator
        self.worker = worker
        self.trial_dir = trial_dir
        self.registry = get_registry()
        self.transcripts: list[str] = []
        self.events: list[dict] = []
        self.ctx: AgentContext | None = None

    def new_context(self) -> AgentContext:
        if self.ctx is not None:
            self.transcripts.append(self.ctx.coordinator.transcript())
            self.events.extend(self.ctx.events)
        self.ctx = init(
            self.coordinator,
            self.worker,
            memory_enabled=self.config.memory,
            strict_single_action=self.config.strict_single_action,
            params=self.config.params,
            registry=self.registry,
            log_dir=self.trial_dir,
            context_tokens=self.config.context_tokens,
            chars_per_token=self.config.chars_per_token,
        )
        return self.ctx

    def run_task(self, task_id: str, slots: int | None = None):
        ctx = self.ctx
        try:
            command_task(ctx, task_id)
        except TransportError:
            raise
        except BackendError as e:
            logger.warning(f"Task command for {task_id} failed: {e}")
            ctx.failures.setdefault(task_id, []).append("backend")
            ctx.record(task_id, "command_failure", detail=str(e))
            return
        if slots is None:
            slots = len(ctx.world_for(task_id).objects)
        run_steps(ctx, slots)

    def score(self, task_id: str) -> TaskResult:
        ctx = self.ctx
        reported_state, reported_remaining = probe_retention(ctx, task_id)
        truth_state, truth_remaining = ground_truth(ctx, task_id)
        scoring = self.config.retention_scoring
        failures = list(ctx.failures.get(task_id, []))
        transcript = str(self.trial_dir / "transcript.txt") if self.trial_dir else None
        return TaskResult(
            task=task_id,
            success=self.registry.is_complete(task_id, ctx.world_for(task_id)) and not failures,
            task_retention=score_retention(reported_state, truth_state, scoring),
            env_retention=score_retention(reported_remaining, truth_remaining, scoring),
            failure_reasons=failures,
            transcript_path=transcript,
        )

    def finish(self):
        if self.ctx is not None:
            self.events.extend(self.ctx.events)
        if self.trial_dir is not None and self.ctx is not None:
            write_transcript(self.ctx, self.trial_dir / "transcript.txt", self.transcripts)
            write_events(self.events, self.trial_dir / "events.ndjson")


def _run_standalone(trial: _Trial) -> dict[str, TaskResult]:
    results = {}
    for task_id in trial.config.tasks:
        trial.new_context().phase = "standalone"
        trial.run_task(task_id)
        results[task_id] = trial.score(task_id)
    return results


def _run_consecutive(trial: _Trial) -> dict[str, TaskResult]:
    results = {}
    trial.new_context().phase = "consecutive"
    for task_id in trial.config.tasks:
        trial.run_task(task_id)
        results[task_id] = trial.score(task_id)
    return results


def _run_intervened(trial: _Trial) -> dict[str, TaskResult]:
    ctx = trial.new_context()
    ctx.phase = "round 1"
    for task_id in trial.config.tasks:
        trial.run_task(task_id, slots=trial.registry.intervention_index(task_id))
    ctx.phase = "round 2"
    for task_id in trial.config.tasks:
        trial.run_task(task_id)
    ctx.phase = "probe"
    return {task_id: trial.score(task_id) for task_id in trial.config.tasks}


_MODE_RUNNERS = {
    "standalone": _run_standalone,
    "consecutive": _run_consecutive,
    "intervened": _run_intervened,
}


def run_trial(config: ExperimentConfig, trial_seed: int, trial_index: int = 0,
              trial_dir: Path | str | None = None, coordinator: LLMBackend | None = None,
              worker: LLMBackend | None = None) -> TrialResult:
    if config.params.seed is None:
        config = replace(config, params=replace(config.params, seed=trial_seed))

    coordinator = coordinator or create_backend(config.backend)
    worker = worker or create_backend(config.worker_spec)
    result = TrialResult(trial_index=trial_index, seed=trial_seed, mode=config.mode,
                         memory=config.memory, model=config.backend)

    trial = _Trial(config, coordinator, worker, Path(trial_dir) if trial_dir else None)
    try:
        result.tasks = _MODE_RUNNERS[config.mode](trial)
    except TransportError as e:
        logger.error(f"Trial {trial_index} aborted: {e}")
        result.valid = False
        result.invalid_reason = str(e)
    finally:
        trial.finish()

    logger.info(f"Trial {trial_index} finished ({'valid' if result.valid else 'invalid'})")
    return result


def aggregate(results: list[TrialResult]) -> MetricsTable:
    valid = [r for r in results if r.valid]
    if not valid:
        raise NoValidTrials(f"none of {len(results)} trials completed")

    totals: dict[tuple, list] = {}
    for result in valid:
        for task_id, task in result.tasks.items():
            key = (task_id, result.model, result.mode, result.memory)
            entry = totals.setdefault(key, [0, 0, 0.0, 0.0])
            entry[0] += 1
            entry[1] += int(task.success)
            entry[2] += task.task_retention
            entry[3] += task.env_retention

    def order(key):
        task_id, model, mode, memory = key
        rank = TASK_ORDER.index(task_id) if task_id in TASK_ORDER else len(TASK_ORDER)
        return rank, MODES.index(mode), memory, model

    rows = [
        MetricsRow(key[0], key[1], key[2], key[3], s / n, tr / n, er / n, n)
        for key, (n, s, tr, er) in sorted(totals.items(), key=lambda item: order(item[0]))
    ]
    return MetricsTable(rows, invalid_trials=len(results) - len(valid))


def _fmt(value: float) -> str:
    return f"{value:.2f}"


def _csv_row(row: MetricsRow) -> list[str]:
    return [row.task, row.model, row.mode, "on" if row.memory else "off",
            _fmt(row.success), _fmt(row.task_retention), _fmt(row.env_retention)]


def format_table(table: MetricsTable) -> str:
    widths = [max(len(h), 12) for h in REPORT_HEADER]
    lines = ["  ".join(h.ljust(w) for h, w in zip(REPORT_HEADER, widths))]
    for row in table.rows:
        lines.append("  ".join(v.ljust(w) for v, w in zip(_csv_row(row), widths)))
    lines.append(f"valid trials: {table.valid_trials}  invalid trials: {table.invalid_trials}")
    return "\n".join(lines)


def emit_report(table: MetricsTable, out_dir: Path | str) -> list[Path]:
    if not table.rows:
        raise NoValidTrials("nothing to report")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    csv_path = out_dir / "report.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(REPORT_HEADER)
        writer.writerows(_csv_row(r) for r in table.rows)

    txt_path = out_dir / "report.txt"
    txt_path.write_text(format_table(table) + "\n", encoding="utf-8")

    series_path = out_dir / "series.csv"
    with open(series_path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["metric", "task", "arm", "value"])
        for metric in ("success", "task_retention", "env_retention"):
            for row in table.rows:
                writer.writerow([metric, row.task, row.arm, _fmt(getattr(row, metric))])

    logger.info(f"Report written to {out_dir}")
    return [csv_path, txt_path, series_path]


def merge_reports(tables: list[MetricsTable], out_dir: Path | str) -> list[Path]:
    """Join several tables on task into comparison.csv / comparison.txt.

    Arms are ``mode/memory-on|off``; deltas are taken against the standalone
    baseline when one of the tables holds it.
    """
    rows = [row for table in tables for row in table.rows]
    if not rows:
        raise NoValidTrials("nothing to compare")

    arms = []
    for row in rows:
        if row.arm not in arms:
            arms.append(row.arm)
    by_key = {(row.task, row.arm): row for row in rows}
    tasks = [t for t in TASK_ORDER if any(r.task == t for r in rows)]
    metrics = ("success", "task_retention", "env_retention")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "comparison.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["task"] + [f"{arm}:{m}" for arm in arms for m in metrics])
        for task in tasks:
            cells = []
            for arm in arms:
                row = by_key.get((task, arm))
                cells += [_fmt(getattr(row, m)) if row else "" for m in metrics]
            writer.writerow([task] + cells)

    baseline = next((a for a in arms if a.startswith("standalone/")), None)
    lines = []
    for task in tasks:
        parts = []
        for arm in arms:
            row = by_key.get((task, arm))
            if row is None:
                continue
            text = f"{arm} success {_fmt(row.success)}"
            base = by_key.get((task, baseline)) if baseline and arm != baseline else None
            if base is not None:
                text += f" ({row.success - base.success:+.2f} vs baseline)"
            parts.append(text)
        lines.append(f"{task}: " + "; ".join(parts))
    txt_path = out_dir / "comparison.txt"
    txt_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return [csv_path, txt_path]


@dataclass
class ExperimentRun:
    config: ExperimentConfig
    results: list[TrialResult]
    table: MetricsTable
    run_dir: Path


def write_config_snapshot(config: ExperimentConfig, run_dir: Path, **metadata) -> Path:
    path = run_dir / "config.snapshot"
    snapshot = {"experiment": config.to_dict(), "worker": config.worker_spec, **metadata}
    path.write_text(json.dumps(snapshot, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def run_experiment(config: ExperimentConfig, run_dir: Path | str, run_name: str | None = None) -> ExperimentRun:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    run_name = run_name or run_dir.name
    write_config_snapshot(config, run_dir, run_name=run_name)

    def one(index: int) -> TrialResult:
        return run_trial(config, config.seed + index, index, run_dir / "trials" / f"trial_{index:03d}")

    logger.info(f"Running {config.trials} {config.mode} trials (memory {'on' if config.memory else 'off'})")
    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(one, range(config.trials)))
    else:
        results = [one(i) for i in range(config.trials)]

    stored = store_trial_results(run_dir / DB_NAME, results, run_name)
    if not stored['success']:
        raise HarnessError(stored['message'])

    table = aggregate(results)
    emit_report(table, run_dir)
    return ExperimentRun(config, results, table, run_dir)


def load_run(run_dir: Path | str) -> list[TrialResult]:
    """Trials stored in a run directory, or in its memory-arm subdirectories."""
    run_dir = Path(run_dir)
    paths = [run_dir / DB_NAME] if (run_dir / DB_NAME).exists() else sorted(run_dir.glob(f"*/{DB_NAME}"))
    if not paths:
        raise FileNotFoundError(f"No {DB_NAME} in {run_dir}")
    return [TrialResult.from_dict(d) for path in paths for d in load_trial_results(path)]
