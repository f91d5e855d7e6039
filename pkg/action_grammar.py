"""Canonical action syntax shared by the coordinator LLM and the executor.

Commands look like ``<move_to_box_1(banana)>``. Anything else in a reply is
prose; angle-bracket fragments that are not valid commands are reported as
diagnostics so the harness can count hallucinated actions.
"""
import re
from dataclasses import dataclass, field
from enum import Enum


class GrammarError(Exception):
    pass


class EmptyArgument(GrammarError):
    pass


class MalformedCommand(GrammarError):
    def __init__(self, fragment: str, reason: str):
        super().__init__(f"{reason}: {fragment!r}")
        self.fragment = fragment
        self.reason = reason


class ActionKind(str, Enum):
    POINT = "point"
    GIVE = "give"
    MOVE_TO_BOX_1 = "move_to_box_1"
    MOVE_TO_BOX_2 = "move_to_box_2"
    PUT_ON_TOWER = "put_on_tower"
    PLACE_IN_BOWL = "place_in_bowl"
    RETRIEVE_WORKING_MEMORY = "retrieve_working_memory"
    RETRIEVE_DECLARATIVE_MEMORY = "retrieve_declarative_memory"

    @property
    def is_memory_call(self) -> bool:
        return self in (ActionKind.RETRIEVE_WORKING_MEMORY, ActionKind.RETRIEVE_DECLARATIVE_MEMORY)

    @property
    def is_manipulation(self) -> bool:
        return not self.is_memory_call


MANIPULATION_KINDS = tuple(k for k in ActionKind if k.is_manipulation)
MEMORY_KINDS = tuple(k for k in ActionKind if k.is_memory_call)

_KINDS_BY_NAME = {k.value: k for k in ActionKind}

# Any angle-bracket fragment; nested brackets are not part of the grammar.
_FRAGMENT_RE = re.compile(r"<([^<>]*)>")
_COMMAND_RE = re.compile(r"^\s*([A-Za-z_][A-Za-z0-9_]*)\s*\(([^()]*)\)\s*$")


@dataclass(frozen=True)
class ActionCommand:
    """A parsed agent output: a manipulation on an object label or a memory call on a task name."""

    kind: ActionKind
    argument: str

    @property
    def is_memory_call(self) -> bool:
        return self.kind.is_memory_call

    def __str__(self) -> str:
        return render(self)


@dataclass
class ParsedReply:
    commands: list[ActionCommand] = field(default_factory=list)
    prose: str = ""
    errors: list[MalformedCommand] = field(default_factory=list)

    @property
    def manipulations(self) -> list[ActionCommand]:
        return [c for c in self.commands if not c.is_memory_call]

    @property
    def memory_calls(self) -> list[ActionCommand]:
        return [c for c in self.commands if c.is_memory_call]


def render(command: ActionCommand) -> str:
    argument = command.argument.strip()
    if not argument:
        raise EmptyArgument(f"{command.kind.value} needs an argument")
    return f"<{command.kind.value}({argument})>"


def command(kind: ActionKind | str, argument: str) -> ActionCommand:
    """Convenience constructor accepting the kind's wire name."""
    if not isinstance(kind, ActionKind):
        kind = _KINDS_BY_NAME[kind]
    return ActionCommand(kind, argument)


def parse_reply(text: str) -> ParsedReply:
    """Extract every ``<name(arg)>`` command from free-form reply text.

    Commands keep their source order. A bad fragment is collected in
    ``errors`` and does not void the rest of the reply.
    """
    reply = ParsedReply()
    prose_parts = []
    cursor = 0

    for match in _FRAGMENT_RE.finditer(text):
        fragment = match.group(0)
        parsed = _COMMAND_RE.match(match.group(1))

        if parsed is None:
            reply.errors.append(MalformedCommand(fragment, "missing parenthesis"))
            continue

        name, argument = parsed.group(1), parsed.group(2).strip()
        kind = _KINDS_BY_NAME.get(name)
        if kind is None:
            reply.errors.append(MalformedCommand(fragment, f"unknown action {name}"))
            continue
        if not argument:
            reply.errors.append(MalformedCommand(fragment, "empty argument"))
            continue

        prose_parts.append(text[cursor:match.start()])
        cursor = match.end()
        reply.commands.append(ActionCommand(kind, argument))

    prose_parts.append(text[cursor:])
    reply.prose = "".join(prose_parts).strip()
    return reply
