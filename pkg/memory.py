"""Declarative memory (per-task logs) and working memory (worker prompts and cues).

Log entries are stored in exactly the text form the worker LLM reads::

    Log Entry:
    Action: <move_to_box_1(pear)>
    Box 1: 1. pear
    Remaining Objects: 1. apple 2. banana 3. cup 4. bowl 5. baseball

Each entry carries the state line of the container its action acted on, with
that container's cumulative contents. A container's latest line therefore
always holds its current contents.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path

from action_grammar import ActionCommand, ActionKind, render
from task_registry import CONTAINER_BY_ACTION, CONTAINER_ORDER, CONTAINER_PLACES, TaskSpec
from world_sim import WorldState, visible_objects

logger = logging.getLogger(__name__)

WORKING_MEMORY_INSTRUCTION = "Name the objects that are relevant to the given task from the following:"
OUTPUT_FORMAT = "Output a list of object names separated by a comma and without any extra text."
ORDER_RULE = "If order is important to the task then output the object names in the correct order."
DECLARATIVE_INSTRUCTION = "Given the sequence of log entries, extract the final list of {subject} from the last log entry."

REMAINING = "Remaining Objects"
QUERY_SUBJECTS = {
    "Box 1": "objects in box 1",
    "Box 2": "objects in box 2",
    "Bowl": "objects in the bowl",
    "Pointed": "objects pointed at",
    "Given": "objects given to the user",
    "Tower": "objects in the tower",
    REMAINING: "remaining objects on the table",
}
FRESH_TASK_STATE = "No objects have been handled yet."


class MemoryStoreError(Exception):
    pass


class EmptyWorld(MemoryStoreError):
    pass


class EmptyReply(MemoryStoreError):
    pass


class EmptyLog(MemoryStoreError):
    pass


def numbered(labels) -> str:
    return " ".join(f"{i}. {label}" for i, label in enumerate(labels, 1))


def parse_numbered(text: str) -> list[str]:
    """Inverse of ``numbered``; labels may contain spaces and digits ("cube 1")."""
    rest = text.strip()
    if not rest:
        return []
    if not rest.startswith("1. "):
        raise MemoryStoreError(f"not a numbered list: {text!r}")

    rest = rest[3:]
    labels = []
    k = 2
    while True:
        marker = f" {k}. "
        idx = rest.find(marker)
        if idx == -1:
            labels.append(rest.strip())
            return labels
        labels.append(rest[:idx].strip())
        rest = rest[idx + len(marker):]
        k += 1


def _line(name: str, labels) -> str:
    return f"{name}: {numbered(labels)}" if labels else f"{name}:"


@dataclass(frozen=True)
class LogEntry:
    action_text: str
    state_lines: tuple[tuple[str, tuple[str, ...]], ...]
    remaining: tuple[str, ...]

    def render(self) -> str:
        lines = ["Log Entry:", f"Action: {self.action_text}"]
        lines += [_line(name, labels) for name, labels in self.state_lines]
        lines.append(_line(REMAINING, self.remaining))
        return "\n".join(lines)


@dataclass(frozen=True)
class TaskLog:
    task_id: str
    entries: tuple[LogEntry, ...] = ()

    def __len__(self):
        return len(self.entries)

    def render(self) -> str:
        return "\n".join(e.render() for e in self.entries)

    @property
    def relocation_count(self) -> int:
        point = f"<{ActionKind.POINT.value}("
        return sum(1 for e in self.entries if not e.action_text.startswith(point))

    @property
    def containers(self) -> list[str]:
        """Containers the log has state lines for, in canonical order."""
        seen = {name for e in self.entries for name, _ in e.state_lines}
        return [c for c in CONTAINER_ORDER if c in seen] + sorted(seen - set(CONTAINER_ORDER))


@dataclass
class DeclarativeSnapshot:
    container_contents: dict[str, list[str]] = field(default_factory=dict)
    remaining: list[str] = field(default_factory=list)

    def describe(self) -> str:
        parts = [f"{name}: {', '.join(labels)}" for name, labels in self.container_contents.items()]
        return "; ".join(parts) if parts else FRESH_TASK_STATE


@dataclass
class WorkingMemory:
    task_reminders: str
    task_state: str
    selective_objects: list[str]


def append_entry(log: TaskLog, action: ActionCommand, post_state: WorldState) -> TaskLog:
    obj = post_state.find(action.argument)
    label = obj.label if obj is not None else action.argument.strip()
    container = CONTAINER_BY_ACTION[action.kind]

    if action.kind is ActionKind.POINT:
        contents = tuple(post_state.pointed)
    else:
        contents = tuple(post_state.contents(CONTAINER_PLACES[container]))

    entry = LogEntry(
        action_text=render(ActionCommand(action.kind, label)),
        state_lines=((container, contents),),
        remaining=tuple(visible_objects(post_state)),
    )
    return TaskLog(log.task_id, log.entries + (entry,))


def build_working_memory_prompt(task: TaskSpec, visible: list[str]) -> str:
    if not visible:
        raise EmptyWorld(f"no objects on the table for {task.name}")
    return "\n".join([
        task.worker_description,
        WORKING_MEMORY_INSTRUCTION,
        ", ".join(visible),
        f"{OUTPUT_FORMAT} {ORDER_RULE}",
    ])


def parse_object_list_reply(text: str) -> list[str]:
    cleaned = text.strip()
    if cleaned.endswith("."):
        cleaned = cleaned[:-1]
    labels = [item.strip() for item in cleaned.split(",")]
    labels = [label for label in labels if label]
    if not labels:
        raise EmptyReply(f"no object names in reply {text!r}")
    return labels


def build_declarative_prompt(log: TaskLog, query: str) -> str:
    """``query`` is a container name ("Box 1") or ``REMAINING``."""
    if not log.entries:
        raise EmptyLog(f"log for {log.task_id} has no entries")
    if query not in QUERY_SUBJECTS:
        raise MemoryStoreError(f"unknown declarative query {query!r}")
    instruction = DECLARATIVE_INSTRUCTION.format(subject=QUERY_SUBJECTS[query])
    return "\n".join([log.render(), instruction, OUTPUT_FORMAT])


def query_from_instruction(line: str) -> str | None:
    for query, subject in QUERY_SUBJECTS.items():
        if line == DECLARATIVE_INSTRUCTION.format(subject=subject):
            return query
    return None


def snapshot_from_log(log: TaskLog) -> DeclarativeSnapshot:
    if not log.entries:
        raise EmptyLog(f"log for {log.task_id} has no entries")
    contents: dict[str, list[str]] = {}
    for entry in log.entries:
        for name, labels in entry.state_lines:
            contents[name] = list(labels)
    ordered = {name: contents[name] for name in log.containers}
    return DeclarativeSnapshot(ordered, list(log.entries[-1].remaining))


def project_world(state: WorldState) -> DeclarativeSnapshot:
    """Container/remaining view of a world, comparable with ``snapshot_from_log``."""
    contents = {}
    for name in CONTAINER_ORDER:
        labels = list(state.pointed) if name == "Pointed" else state.contents(CONTAINER_PLACES[name])
        if labels:
            contents[name] = labels
    return DeclarativeSnapshot(contents, visible_objects(state))


def build_working_memory(task: TaskSpec, selective: list[str], visible: list[str],
                         snapshot: DeclarativeSnapshot | None = None) -> WorkingMemory:
    on_table = {label.lower(): label for label in visible}
    kept = []
    for label in selective:
        match = on_table.get(" ".join(label.split()).lower())
        if match is not None and match not in kept:
            kept.append(match)
    task_state = snapshot.describe() if snapshot is not None else FRESH_TASK_STATE
    return WorkingMemory(task_reminders=task.reminder, task_state=task_state, selective_objects=kept)


def parse_log_text(task_id: str, text: str) -> TaskLog:
    entries = []
    current = None

    for raw in text.splitlines():
        line = raw.rstrip()
        if not line:
            continue
        if line == "Log Entry:":
            current = {"action": None, "states": [], "remaining": ()}
            entries.append(current)
            continue
        if current is None:
            raise MemoryStoreError(f"text before the first log entry: {line!r}")

        name, sep, value = line.partition(":")
        if not sep:
            raise MemoryStoreError(f"malformed log line: {line!r}")
        if name == "Action":
            current["action"] = value.strip()
        elif name == REMAINING:
            current["remaining"] = tuple(parse_numbered(value))
        else:
            current["states"].append((name, tuple(parse_numbered(value))))

    log_entries = []
    for e in entries:
        if not e["action"]:
            raise MemoryStoreError("log entry without an action line")
        log_entries.append(LogEntry(e["action"], tuple(e["states"]), e["remaining"]))
    return TaskLog(task_id, tuple(log_entries))


def log_path(log_dir: Path | str, task_id: str) -> Path:
    return Path(log_dir) / f"{task_id}.log"


def write_log(log: TaskLog, log_dir: Path | str) -> Path:
    path = log_path(log_dir, log.task_id)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = log.render()
    path.write_text(text + "\n" if text else "", encoding="utf-8")
    return path


def load_log(log_dir: Path | str, task_id: str) -> TaskLog:
    path = log_path(log_dir, task_id)
    if not path.exists():
        raise EmptyLog(f"no log file at {path}")
    return parse_log_text(task_id, path.read_text(encoding="utf-8"))
