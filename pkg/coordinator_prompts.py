"""Messages the orchestrator sends to the coordinator LLM.

Every message starts with a header line naming its purpose and the task, so
transcripts stay readable and the scripted mock can answer from the same
sections a live model reads.
"""
from dataclasses import dataclass, field
import re

from memory import REMAINING
from task_registry import CONTAINER_ORDER

COMMAND = "command"
STEP = "step"
CORRECTION = "correction"
INJECTION = "injection"
PROBE_STATE = "probe_state"
PROBE_ENVIRONMENT = "probe_environment"

OBJECTS_PREFIX = "Objects on the table:"
RESUME_NOTE = ("This task was interrupted earlier. Before acting, retrieve the declarative memory "
               "and then the working memory for this task.")
FRESH_NOTE = "Before acting, retrieve the working memory for this task."
NO_MEMORY_NOTE = "Reply OK when you are ready to perform this task."
STEP_REQUEST = ("Generate the next action for this task. Reply with exactly one action, "
                "or say that the task is complete.")
INJECTION_CLOSE = "Continue with the memory protocol, or reply OK once this memory is integrated."
PROBE_STATE_REQUEST = ("Report the objects in each container of this task, one line per container "
                       "in the form \"<container>: <object>, <object>\". Output only those lines.")
PROBE_ENVIRONMENT_REQUEST = ("List the objects that remain on the table for this task, separated by "
                             "a comma and without any extra text.")
NO_LOG_NOTE = "No log entries exist for this task yet."

_HEADERS = [
    (COMMAND, re.compile(r"^Task command: (?P<task>.+)$")),
    (STEP, re.compile(r"^Task: (?P<task>.+)$")),
    (CORRECTION, re.compile(r"^Correction \((?P<task>[^)]+)\): .*$")),
    (INJECTION, re.compile(r"^Memory injection: (?P<memory>working|declarative) memory \((?P<task>[^)]+)\)$")),
    (PROBE_STATE, re.compile(r"^Retention probe \((?P<task>[^)]+)\): task state$")),
    (PROBE_ENVIRONMENT, re.compile(r"^Retention probe \((?P<task>[^)]+)\): environment state$")),
]
_CONTAINER_NAMES = {name.lower(): name for name in CONTAINER_ORDER + (REMAINING,)}


@dataclass
class MessageInfo:
    kind: str | None
    task: str | None = None
    memory: str | None = None
    objects: list[str] | None = None
    body: list[str] = field(default_factory=list)


def build_system_prompt(registry, memory_enabled):
    """Procedural memory: task specs, action specs and, with memory, the memory functions."""
    parts = [registry.task_specs_text, registry.catalog.manipulation_text]
    if memory_enabled:
        parts.append(registry.catalog.memory_text)
    return "\n\n".join(parts)


def objects_line(visible):
    return f"{OBJECTS_PREFIX} {', '.join(visible)}".rstrip()


def task_command_message(task, visible, memory_enabled, resumed):
    if not memory_enabled:
        note = NO_MEMORY_NOTE
    else:
        note = RESUME_NOTE if resumed else FRESH_NOTE
    return "\n".join([f"Task command: {task.name}", objects_line(visible), note])


def step_message(task, visible):
    return "\n".join([f"Task: {task.name}", objects_line(visible), STEP_REQUEST])


def correction_message(task, visible, problem):
    return "\n".join([f"Correction ({task.name}): {problem} Re-emit exactly one action.", objects_line(visible)])


def injection_message(task, memory, lines):
    return "\n".join([f"Memory injection: {memory} memory ({task.name})", *lines, INJECTION_CLOSE])


def declarative_lines(snapshot):
    if snapshot is None:
        return [NO_LOG_NOTE]
    lines = [f"{name}: {', '.join(labels)}" for name, labels in snapshot.container_contents.items()]
    lines.append(f"{REMAINING}: {', '.join(snapshot.remaining)}")
    return [line.rstrip() for line in lines]


def working_lines(wm):
    return [
        f"Task Reminders: {wm.task_reminders}",
        f"Task State: {wm.task_state}",
        f"Selective Objects: {', '.join(wm.selective_objects)}".rstrip(),
    ]


def probe_messages(task):
    return (
        f"Retention probe ({task.name}): task state\n{PROBE_STATE_REQUEST}",
        f"Retention probe ({task.name}): environment state\n{PROBE_ENVIRONMENT_REQUEST}",
    )


def _split_labels(text):
    return [item.strip() for item in text.split(",") if item.strip()]


def classify(text: str) -> MessageInfo:
    lines = text.strip().splitlines()
    if not lines:
        return MessageInfo(kind=None)

    info = MessageInfo(kind=None, body=lines[1:])
    for kind, pattern in _HEADERS:
        match = pattern.match(lines[0].strip())
        if match:
            info.kind = kind
            info.task = match.group("task").strip()
            info.memory = match.groupdict().get("memory")
            break

    for line in lines[1:]:
        if line.startswith(OBJECTS_PREFIX):
            info.objects = _split_labels(line[len(OBJECTS_PREFIX):])
    if info.kind == COMMAND and info.body:
        note = info.body[-1].strip()
        info.memory = {RESUME_NOTE: "declarative", FRESH_NOTE: "working"}.get(note)
    return info


def parse_container_lines(text: str) -> dict[str, list[str]]:
    """Read "Box 1: pear, apple" style lines; unknown lines are ignored."""
    contents = {}
    for line in text.splitlines():
        name, sep, value = line.partition(":")
        canonical = _CONTAINER_NAMES.get(name.strip().lower())
        if sep and canonical:
            contents[canonical] = _split_labels(value)
    return contents
