"""Two-layer control loop: the coordinator session plans, the worker serves memory.

The coordinator keeps procedural memory (system prompt) and the full dialogue.
On a task command it is asked to run the memory protocol; the orchestrator
fulfils each retrieval call with worker requests and injects the result as a
user message. Each step then asks for exactly one action, executes it in the
task's world and appends the declarative log.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from action_grammar import ActionCommand, ActionKind, parse_reply
from coordinator_prompts import (
    build_system_prompt,
    correction_message,
    declarative_lines,
    injection_message,
    parse_container_lines,
    probe_messages,
    step_message,
    task_command_message,
    working_lines,
)
from llm_backends import (
    DEFAULT_CHARS_PER_TOKEN,
    DEFAULT_CONTEXT_TOKENS,
    BackendError,
    ChatSession,
    GenerationParams,
    LLMBackend,
    TransportError,
)
from memory import (
    REMAINING,
    DeclarativeSnapshot,
    EmptyReply,
    EmptyWorld,
    TaskLog,
    WorkingMemory,
    append_entry,
    build_declarative_prompt,
    build_working_memory,
    build_working_memory_prompt,
    parse_object_list_reply,
    project_world,
    snapshot_from_log,
    write_log,
)
from task_registry import TaskRegistry, TaskSpec, get_registry
from world_sim import WorldError, WorldState, apply_action, load_world, visible_objects

logger = logging.getLogger(__name__)

# Memory calls answered per coordinator turn before the orchestrator moves on.
MAX_MEMORY_ROUNDS = 4


class OrchestratorError(Exception):
    pass


class NoActiveTask(OrchestratorError):
    pass


class FailureReason(str, Enum):
    PARSE = "parse"
    INVALID_ACTION = "invalid_action"
    BATCH_VIOLATION = "batch_violation"
    BACKEND = "backend"


class StepStatus(str, Enum):
    EXECUTED = "executed"
    TASK_COMPLETE = "task_complete"
    FAILURE = "failure"


@dataclass(frozen=True)
class StepOutcome:
    status: StepStatus
    actions: tuple[ActionCommand, ...] = ()
    reason: FailureReason | None = None
    detail: str = ""
    outside_working_memory: tuple[str, ...] = ()

    @property
    def action(self) -> ActionCommand | None:
        return self.actions[0] if self.actions else None

    @property
    def failed(self) -> bool:
        return self.status is StepStatus.FAILURE

    @classmethod
    def failure(cls, reason: FailureReason, detail: str) -> StepOutcome:
        return cls(StepStatus.FAILURE, reason=reason, detail=detail)


@dataclass
class AgentContext:
    coordinator: ChatSession
    worker: LLMBackend
    registry: TaskRegistry
    memory_enabled: bool = True
    strict_single_action: bool = True
    params: GenerationParams = field(default_factory=GenerationParams)
    log_dir: Path | None = None
    worlds: dict[str, WorldState] = field(default_factory=dict)
    logs: dict[str, TaskLog] = field(default_factory=dict)
    active_task: str | None = None
    working_memory: dict[str, WorkingMemory] = field(default_factory=dict)
    declarative: dict[str, DeclarativeSnapshot] = field(default_factory=dict)
    failures: dict[str, list[str]] = field(default_factory=dict)
    events: list[dict] = field(default_factory=list)
    phase: str = ""

    @property
    def world(self) -> WorldState | None:
        return self.worlds.get(self.active_task) if self.active_task else None

    def world_for(self, task_id: str) -> WorldState:
        if task_id not in self.worlds:
            self.worlds[task_id] = load_world(task_id)
        return self.worlds[task_id]

    def log_for(self, task_id: str) -> TaskLog:
        return self.logs.setdefault(task_id, TaskLog(task_id))

    def record(self, task_id: str, kind: str, **data):
        self.events.append({"phase": self.phase, "task": task_id, "event": kind, **data})


def init(coordinator_backend: LLMBackend, worker_backend: LLMBackend, *, memory_enabled: bool = True,
         strict_single_action: bool = True, params: GenerationParams | None = None,
         registry: TaskRegistry | None = None, log_dir: Path | str | None = None,
         context_tokens: int = DEFAULT_CONTEXT_TOKENS,
         chars_per_token: float = DEFAULT_CHARS_PER_TOKEN) -> AgentContext:
    registry = registry or get_registry()
    params = params or GenerationParams()
    session = ChatSession(
        backend=coordinator_backend,
        system_prompt=build_system_prompt(registry, memory_enabled),
        params=params,
        context_tokens=context_tokens,
        chars_per_token=chars_per_token,
    )
    return AgentContext(
        coordinator=session,
        worker=worker_backend,
        registry=registry,
        memory_enabled=memory_enabled,
        strict_single_action=strict_single_action,
        params=params,
        log_dir=Path(log_dir) if log_dir else None,
    )


def command_task(ctx: AgentContext, task_id: str):
    """Make ``task_id`` the active task and run the memory protocol for it."""
    task = ctx.registry.get(task_id)
    if ctx.active_task and ctx.active_task != task.id:
        logger.info(f"Pausing {ctx.active_task} with {len(ctx.log_for(ctx.active_task))} log entries")

    ctx.active_task = task.id
    world = ctx.world_for(task.id)
    resumed = len(ctx.log_for(task.id)) > 0
    logger.info(f"Task commanded: {task.id} ({'resumed' if resumed else 'fresh'})")
    ctx.record(task.id, "command", resumed=resumed)

    reply = ctx.coordinator.chat(task_command_message(task, visible_objects(world), ctx.memory_enabled, resumed))
    if ctx.memory_enabled:
        serve_memory_calls(ctx, reply)


def serve_memory_calls(ctx: AgentContext, reply: str) -> str:
    """Fulfil retrieval calls in ``reply`` and return the coordinator's last reply."""
    for _ in range(MAX_MEMORY_ROUNDS):
        calls = parse_reply(reply).memory_calls
        if not calls:
            return reply

        call = calls[0]
        try:
            task = ctx.registry.get(call.argument)
        except WorldError:
            logger.warning(f"Memory call for unknown task {call.argument!r}")
            return reply

        if call.kind is ActionKind.RETRIEVE_DECLARATIVE_MEMORY:
            snapshot = retrieve_declarative(ctx, task)
            message = injection_message(task, "declarative", declarative_lines(snapshot))
        else:
            wm = retrieve_working(ctx, task)
            message = injection_message(task, "working", working_lines(wm))
        reply = ctx.coordinator.chat(message)
    return reply


def _worker_list(ctx: AgentContext, prompt: str) -> list[str]:
    try:
        return parse_object_list_reply(ctx.worker.complete(prompt, ctx.params))
    except EmptyReply:
        return []


def retrieve_declarative(ctx: AgentContext, task: TaskSpec) -> DeclarativeSnapshot | None:
    log = ctx.log_for(task.id)
    if not log.entries:
        return None

    contents = {name: _worker_list(ctx, build_declarative_prompt(log, name)) for name in log.containers}
    snapshot = DeclarativeSnapshot(contents, _worker_list(ctx, build_declarative_prompt(log, REMAINING)))
    if snapshot != snapshot_from_log(log):
        logger.warning(f"Worker recall of the {task.id} log differs from the log itself")
        ctx.record(task.id, "worker_mismatch", reported=snapshot.describe())
    ctx.declarative[task.id] = snapshot
    ctx.record(task.id, "declarative_injection", containers=list(contents))
    return snapshot


def retrieve_working(ctx: AgentContext, task: TaskSpec) -> WorkingMemory:
    visible = visible_objects(ctx.world_for(task.id))
    try:
        selective = _worker_list(ctx, build_working_memory_prompt(task, visible))
    except EmptyWorld:
        selective = []

    wm = build_working_memory(task, selective, visible, ctx.declarative.get(task.id))
    ctx.working_memory[task.id] = wm
    ctx.record(task.id, "working_injection", selective_objects=wm.selective_objects)
    return wm


def _execute(ctx: AgentContext, task: TaskSpec, reply: str) -> StepOutcome:
    parsed = parse_reply(reply)
    if parsed.memory_calls and not parsed.manipulations and ctx.memory_enabled:
        parsed = parse_reply(serve_memory_calls(ctx, reply))

    manipulations = parsed.manipulations
    if not manipulations:
        return StepOutcome.failure(FailureReason.PARSE, f"no action in reply: {reply[:120]!r}")
    if ctx.strict_single_action and len(manipulations) > 1:
        return StepOutcome.failure(FailureReason.BATCH_VIOLATION, f"{len(manipulations)} actions in one reply")
    if ctx.strict_single_action and parsed.errors:
        return StepOutcome.failure(FailureReason.PARSE, str(parsed.errors[0]))

    executed = []
    for action in manipulations:
        world = ctx.world_for(task.id)
        try:
            new_world = apply_action(world, action)
        except WorldError as e:
            if executed:
                logger.warning(f"Stopping batch at {action}: {e}")
                break
            return StepOutcome.failure(FailureReason.INVALID_ACTION, str(e))

        canonical = ActionCommand(action.kind, new_world.find(action.argument).label)
        log = append_entry(ctx.log_for(task.id), canonical, new_world)
        ctx.worlds[task.id] = new_world
        ctx.logs[task.id] = log
        if ctx.log_dir:
            write_log(log, ctx.log_dir / "logs")
        executed.append(canonical)

    wm = ctx.working_memory.get(task.id)
    outside = ()
    if wm is not None:
        outside = tuple(a.argument for a in executed if a.argument not in wm.selective_objects)

    status = StepStatus.TASK_COMPLETE if task.goal(ctx.worlds[task.id]) else StepStatus.EXECUTED
    return StepOutcome(status, tuple(executed), outside_working_memory=outside)


def _attempt(ctx: AgentContext, task: TaskSpec, message: str) -> StepOutcome:
    try:
        reply = ctx.coordinator.chat(message)
        return _execute(ctx, task, reply)
    except TransportError:
        raise
    except BackendError as e:
        logger.warning(f"Backend failure during {task.id} step: {e}")
        return StepOutcome.failure(FailureReason.BACKEND, str(e))


def _record_outcome(ctx: AgentContext, task_id: str, outcome: StepOutcome, retried: bool = False):
    if outcome.failed:
        ctx.failures.setdefault(task_id, []).append(outcome.reason.value)
        logger.warning(f"{task_id}: {outcome.reason.value} failure: {outcome.detail}")
    ctx.record(
        task_id,
        "step",
        outcome=outcome.status.value,
        actions=[str(a) for a in outcome.actions],
        reason=outcome.reason.value if outcome.reason else None,
        detail=outcome.detail,
        outside_working_memory=list(outcome.outside_working_memory),
        retried=retried,
    )


def step(ctx: AgentContext) -> StepOutcome:
    if ctx.active_task is None:
        raise NoActiveTask("command a task before stepping")
    task = ctx.registry.get(ctx.active_task)
    world = ctx.world_for(task.id)
    if task.goal(world):
        return StepOutcome(StepStatus.TASK_COMPLETE)

    visible = visible_objects(world)
    outcome = _attempt(ctx, task, step_message(task, visible))
    if outcome.reason in (FailureReason.PARSE, FailureReason.INVALID_ACTION):
        _record_outcome(ctx, task.id, outcome, retried=True)
        outcome = _attempt(ctx, task, correction_message(task, visible, outcome.detail))

    _record_outcome(ctx, task.id, outcome)
    return outcome


def run_steps(ctx: AgentContext, slots: int) -> list[StepOutcome]:
    """Step the active task until it completes or ``slots`` steps are used."""
    outcomes = []
    for _ in range(slots):
        outcome = step(ctx)
        outcomes.append(outcome)
        if outcome.status is StepStatus.TASK_COMPLETE:
            break
    return outcomes


def probe_retention(ctx: AgentContext, task_id: str) -> tuple[dict[str, list[str]], list[str] | None]:
    """Ask the coordinator what it remembers; ``None`` means the table report was unreadable."""
    task = ctx.registry.get(task_id)
    state_question, table_question = probe_messages(task)

    try:
        reported_state = parse_container_lines(ctx.coordinator.chat(state_question))
    except TransportError:
        raise
    except BackendError as e:
        logger.warning(f"Task-state probe for {task.id} failed: {e}")
        reported_state = {}

    try:
        reported_remaining = parse_object_list_reply(ctx.coordinator.chat(table_question))
    except EmptyReply:
        reported_remaining = []
    except TransportError:
        raise
    except BackendError as e:
        logger.warning(f"Environment probe for {task.id} failed: {e}")
        reported_remaining = None

    ctx.record(task.id, "probe", task_state=reported_state, remaining=reported_remaining)
    return reported_state, reported_remaining


def ground_truth(ctx: AgentContext, task_id: str) -> tuple[dict[str, list[str]], list[str]]:
    """Container contents the task uses (empty ones included) and the objects left on the table."""
    task = ctx.registry.get(task_id)
    projection = project_world(ctx.world_for(task.id))
    containers = {name: [] for name in task.containers}
    containers.update(projection.container_contents)
    return containers, projection.remaining


def write_transcript(ctx: AgentContext, path: Path | str, transcripts: list[str] | None = None) -> Path:
    """Write the coordinator dialogue; earlier sessions of the trial are separated by reset markers."""
    parts = list(transcripts or []) + [ctx.coordinator.transcript()]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n\n### reset\n\n".join(parts) + "\n", encoding="utf-8")
    return path


def write_events(events: list[dict], path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        for event in events:
            handle.write(json.dumps(event, sort_keys=True) + "\n")
    return path
