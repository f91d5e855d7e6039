"""Scripted backends for offline runs and tests.

``MockBackend`` answers as a function of the messages it is sent, never of
its own call history, so parallel trials can share one instance:

* oracle: sees the whole conversation, follows the memory protocol and emits
  the next correct action.
* forgetful: sees only the last ``window`` non-system messages. Once a task's
  specification has slid out of view it acts on whatever is first on the
  table.

Worker prompts (a single user message, no system prompt) always get the
correct answer.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

from action_grammar import ActionCommand, ActionKind, parse_reply, render
from config import ConfigError
from coordinator_prompts import (
    COMMAND,
    CORRECTION,
    INJECTION,
    PROBE_ENVIRONMENT,
    PROBE_STATE,
    STEP,
    classify,
    parse_container_lines,
)
from llm_backends import GenerationParams, LLMBackend, TraceExhausted
from memory import (
    REMAINING,
    WORKING_MEMORY_INSTRUCTION,
    parse_log_text,
    query_from_instruction,
    snapshot_from_log,
)
from task_registry import CONTAINER_BY_ACTION, CONTAINER_ORDER, TaskRegistry, TaskSpec, get_registry
from world_sim import WITH_USER, Color, UnknownTask, load_world

logger = logging.getLogger(__name__)

BEHAVIORS = ("oracle", "forgetful")
DONE_REPLY = "All required actions for this task are complete."
EMPTY_TABLE_REPLY = "There is nothing left on the table."


@dataclass
class _Recall:
    """What the conversation in view says about one task."""

    contents: dict[str, list[str]] = field(default_factory=dict)
    table: list[str] | None = None

    def apply(self, action: ActionCommand):
        container = CONTAINER_BY_ACTION[action.kind]
        self.contents.setdefault(container, []).append(action.argument)
        if action.kind is not ActionKind.POINT and self.table is not None:
            self.table = [t for t in self.table if t.lower() != action.argument.lower()]


class MockBackend(LLMBackend):

    def __init__(self, behavior: str = "oracle", window: int | None = None, registry: TaskRegistry | None = None):
        super().__init__()
        if behavior not in BEHAVIORS:
            raise ConfigError(f"Unknown mock behavior: {behavior}")
        if behavior == "forgetful" and (window is None or window < 1):
            raise ConfigError("forgetful mock needs a window of at least one message")
        self.behavior = behavior
        self.window = window
        self.name = "mock:oracle" if behavior == "oracle" else f"mock:forgetful:{window}"
        self._registry = registry

    @property
    def registry(self) -> TaskRegistry:
        return self._registry or get_registry()

    def generate(self, messages: list[dict], params: GenerationParams) -> str:
        self.calls += 1
        if not messages:
            raise ValueError("no messages to answer")
        if len(messages) == 1 and messages[0]["role"] == "user":
            return self._answer_worker(messages[0]["content"])

        if self.behavior == "forgetful":
            messages = [m for m in messages if m["role"] != "system"][-self.window:]
        return self._answer_coordinator(messages)

    def _answer_worker(self, prompt: str) -> str:
        lines = prompt.splitlines()

        if len(lines) >= 3 and lines[1] == WORKING_MEMORY_INSTRUCTION:
            task = next((t for t in self.registry if t.worker_description == lines[0]), None)
            if task is None:
                return ""
            visible = [item.strip() for item in lines[2].split(",") if item.strip()]
            relevant = self.registry.relevant_objects(task.id, visible)
            if task.ordered:
                inventory = load_world(task.id)
                relevant.sort(key=lambda label: 0 if inventory.find(label).color is Color.YELLOW else 1)
            return ", ".join(relevant)

        if lines and lines[0] == "Log Entry:" and len(lines) >= 3:
            query = query_from_instruction(lines[-2])
            snapshot = snapshot_from_log(parse_log_text("worker", "\n".join(lines[:-2])))
            if query == REMAINING:
                return ", ".join(snapshot.remaining)
            return ", ".join(snapshot.container_contents.get(query, []))

        return "I cannot answer this request."

    def _task(self, name: str | None) -> TaskSpec | None:
        if name is None:
            return None
        try:
            return self.registry.get(name)
        except UnknownTask:
            return None

    def _recall(self, messages: list[dict]) -> dict[str, _Recall]:
        recall: dict[str, _Recall] = {}
        current = None
        for m in messages:
            if m["role"] == "system":
                continue
            if m["role"] == "user":
                info = classify(m["content"])
                task = self._task(info.task)
                if task is None:
                    continue
                current = task.id
                state = recall.setdefault(current, _Recall())
                if info.objects is not None:
                    state.table = list(info.objects)
                if info.kind == INJECTION and info.memory == "declarative":
                    reported = parse_container_lines("\n".join(info.body))
                    state.table = reported.pop(REMAINING, state.table)
                    state.contents = reported
            elif current is not None:
                for action in parse_reply(m["content"]).manipulations:
                    recall[current].apply(action)
        return recall

    def _knows(self, messages: list[dict], task: TaskSpec) -> bool:
        for m in messages:
            if m["role"] == "system" and task.spec_text in m["content"]:
                return True
            if m["role"] == "user":
                info = classify(m["content"])
                if info.kind == INJECTION and info.memory == "working" and self._task(info.task) == task:
                    return True
        return False

    def _answer_coordinator(self, messages: list[dict]) -> str:
        latest = next((m["content"] for m in reversed(messages) if m["role"] == "user"), "")
        info = classify(latest)
        task = self._task(info.task)
        if task is None:
            return "OK"

        if info.kind == COMMAND:
            if info.memory == "declarative":
                return render(ActionCommand(ActionKind.RETRIEVE_DECLARATIVE_MEMORY, task.name))
            if info.memory == "working":
                return render(ActionCommand(ActionKind.RETRIEVE_WORKING_MEMORY, task.name))
            return "OK"

        if info.kind == INJECTION:
            if info.memory == "declarative":
                return render(ActionCommand(ActionKind.RETRIEVE_WORKING_MEMORY, task.name))
            return "OK"

        recall = self._recall(messages).get(task.id, _Recall())
        if info.kind in (STEP, CORRECTION):
            return self._next_action(task, info.objects or [], recall, self._knows(messages, task))
        if info.kind == PROBE_STATE:
            lines = [f"{name}: {', '.join(recall.contents[name])}" for name in CONTAINER_ORDER
                     if recall.contents.get(name)]
            return "\n".join(lines) if lines else "I do not remember any task state."
        if info.kind == PROBE_ENVIRONMENT:
            return "I do not remember the table." if recall.table is None else ", ".join(recall.table)
        return "OK"

    def _next_action(self, task: TaskSpec, table: list[str], recall: _Recall, knows: bool) -> str:
        if knows:
            on_table = {label.lower() for label in table}
            state = load_world(task.id)
            for obj in state.objects:
                if obj.label.lower() not in on_table:
                    state = state.with_location(obj.label, WITH_USER)
            pointed = [state.find(p).label for p in recall.contents.get("Pointed", []) if state.find(p)]
            state = replace(state, pointed=tuple(pointed))

            actions = self.registry.oracle_actions(task.id, state)
            return render(actions[0]) if actions else DONE_REPLY

        if not table:
            return EMPTY_TABLE_REPLY
        kind = next(k for k in ActionKind if k in task.allowed_actions)
        return render(ActionCommand(kind, table[0]))


class TraceBackend(LLMBackend):
    """Replays recorded replies in order, regardless of the prompt."""

    def __init__(self, replies: list[str], name: str = "mock:trace"):
        super().__init__()
        self.replies = list(replies)
        self.name = name
        self._cursor = 0

    @classmethod
    def from_file(cls, path: Path | str) -> TraceBackend:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"Trace file not found: {path}")
        text = path.read_text(encoding="utf-8")
        if path.suffix == ".json":
            replies = json.loads(text)
            if not isinstance(replies, list) or not all(isinstance(r, str) for r in replies):
                raise ConfigError(f"Trace file {path} must hold a JSON list of strings")
        else:
            replies = replies_from_transcript(text)
        return cls(replies, name=f"mock:trace:{path.name}")

    @property
    def remaining(self) -> int:
        return len(self.replies) - self._cursor

    def generate(self, messages: list[dict], params: GenerationParams) -> str:
        self.calls += 1
        if self._cursor >= len(self.replies):
            raise TraceExhausted(f"{self.name}: no recorded reply left for call {self.calls}")
        reply = self.replies[self._cursor]
        self._cursor += 1
        return reply


def replies_from_transcript(text: str) -> list[str]:
    """Assistant turns of a transcript written by the orchestrator."""
    replies = []
    role, lines = None, []
    for line in text.splitlines() + ["### end"]:
        if line.startswith("### "):
            if role == "assistant":
                replies.append("\n".join(lines).strip())
            role, lines = line[4:].strip(), []
        else:
            lines.append(line)
    return replies
