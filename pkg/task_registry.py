"""Procedural memory: the five task definitions and the action catalog.

Prompt texts come from the fixtures in ``prompts/`` and ``data/tasks.json``;
the relevance, goal and oracle rules are hand-coded from the task summary
(what goes where, and the yellow-before-red pointing order).
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable

from action_grammar import MANIPULATION_KINDS, MEMORY_KINDS, ActionCommand, ActionKind
from config import DATA_DIR, PROMPTS_DIR, ConfigError, read_fixture
from world_sim import (
    ACTION_DESTINATIONS,
    Category,
    Color,
    ObjectInstance,
    Place,
    UnknownTask,
    WorldState,
    load_world,
)

logger = logging.getLogger(__name__)

# Definition order; multi-task modes always run tasks in this order.
TASK_ORDER = ("separate", "arrange", "point", "recipe", "tower")

# Log/probe container name for the effect of each manipulation.
CONTAINER_BY_ACTION = {
    ActionKind.MOVE_TO_BOX_1: "Box 1",
    ActionKind.MOVE_TO_BOX_2: "Box 2",
    ActionKind.PLACE_IN_BOWL: "Bowl",
    ActionKind.POINT: "Pointed",
    ActionKind.GIVE: "Given",
    ActionKind.PUT_ON_TOWER: "Tower",
}
CONTAINER_PLACES = {
    "Box 1": Place.IN_BOX_1,
    "Box 2": Place.IN_BOX_2,
    "Bowl": Place.IN_BOWL,
    "Given": Place.WITH_USER,
    "Tower": Place.ON_TOWER,
}
CONTAINER_ORDER = ("Box 1", "Box 2", "Bowl", "Pointed", "Given", "Tower")

RECIPE_OBJECTS = ("bowl", "jello", "banana")
UNCOLORED = (Color.BLACK, Color.WHITE)


def _separate_target(obj: ObjectInstance) -> ActionKind | None:
    if obj.category is Category.FRUIT:
        return ActionKind.MOVE_TO_BOX_1
    if obj.category in (Category.KITCHENWARE, Category.CONTAINER):
        return ActionKind.MOVE_TO_BOX_2
    return None


def _arrange_target(obj: ObjectInstance) -> ActionKind | None:
    return ActionKind.PLACE_IN_BOWL if obj.category is Category.FRUIT else None


def _point_target(obj: ObjectInstance) -> ActionKind | None:
    return ActionKind.POINT if obj.color in (Color.YELLOW, Color.RED) else None


def _recipe_target(obj: ObjectInstance) -> ActionKind | None:
    return ActionKind.GIVE if obj.label.lower() in RECIPE_OBJECTS else None


def _tower_target(obj: ObjectInstance) -> ActionKind | None:
    if obj.category is Category.CUBE and obj.color not in UNCOLORED:
        return ActionKind.PUT_ON_TOWER
    return None


_TARGET_RULES: dict[str, Callable[[ObjectInstance], ActionKind | None]] = {
    "separate": _separate_target,
    "arrange": _arrange_target,
    "point": _point_target,
    "recipe": _recipe_target,
    "tower": _tower_target,
}


@dataclass(frozen=True)
class TaskSpec:
    id: str
    name: str
    spec_text: str
    allowed_actions: frozenset[ActionKind]
    worker_description: str
    reminder: str
    target_rule: Callable[[ObjectInstance], ActionKind | None] = field(repr=False, compare=False)

    @property
    def ordered(self) -> bool:
        return self.id == "point"

    @property
    def containers(self) -> tuple[str, ...]:
        names = {CONTAINER_BY_ACTION[k] for k in self.allowed_actions}
        return tuple(c for c in CONTAINER_ORDER if c in names)

    def relevance(self, obj: ObjectInstance) -> bool:
        return self.target_rule(obj) is not None

    def goal(self, state: WorldState) -> bool:
        if self.ordered:
            return _pointing_goal(state)

        if state.pointed:
            return False
        for obj in state.objects:
            target = self.target_rule(obj)
            if target is None:
                if obj.location.place is not Place.ON_TABLE:
                    return False
            elif target is ActionKind.PUT_ON_TOWER:
                if obj.location.place is not Place.ON_TOWER:
                    return False
            elif obj.location != ACTION_DESTINATIONS[target]:
                return False
        return True


def _pointing_goal(state: WorldState) -> bool:
    if any(o.location.place is not Place.ON_TABLE for o in state.objects):
        return False
    yellows = {o.label for o in state.objects if o.color is Color.YELLOW}
    reds = {o.label for o in state.objects if o.color is Color.RED}
    pointed = list(state.pointed)
    if len(pointed) != len(yellows) + len(reds):
        return False
    return set(pointed[:len(yellows)]) == yellows and set(pointed[len(yellows):]) == reds


@dataclass(frozen=True)
class ActionSpecCatalog:
    entries: tuple[tuple[ActionKind, str], ...]

    def text(self, kinds=None) -> str:
        return "\n\n".join(desc for kind, desc in self.entries if kinds is None or kind in kinds)

    @property
    def manipulation_text(self) -> str:
        return self.text(MANIPULATION_KINDS)

    @property
    def memory_text(self) -> str:
        return self.text(MEMORY_KINDS)


def _paragraphs(text: str) -> list[str]:
    return [p.strip("\n") for p in text.strip("\n").split("\n\n") if p.strip()]


def _parse_catalog(*texts: str) -> ActionSpecCatalog:
    entries = []
    for text in texts:
        for paragraph in _paragraphs(text):
            name = paragraph[1:paragraph.index("(")]
            entries.append((ActionKind(name), paragraph))

    kinds = [k for k, _ in entries]
    if sorted(k.value for k in kinds) != sorted(k.value for k in ActionKind):
        raise ConfigError(f"Action catalog must describe each of the eight functions once, got {kinds}")
    return ActionSpecCatalog(tuple(entries))


class TaskRegistry:
    """Immutable after construction; safe to share across parallel trials."""

    def __init__(self, prompts_dir: Path | str = PROMPTS_DIR, tasks_path: Path | str = DATA_DIR / "tasks.json"):
        try:
            metadata = json.loads(Path(tasks_path).read_text(encoding="utf-8"))
        except FileNotFoundError as e:
            raise ConfigError(f"Missing fixture file: {tasks_path}") from e

        task_text = read_fixture("task_specs.txt", prompts_dir)
        self.catalog = _parse_catalog(
            read_fixture("action_specs.txt", prompts_dir),
            read_fixture("memory_specs.txt", prompts_dir),
        )

        paragraphs = _paragraphs(task_text)
        headings = tuple(m["heading"] for m in metadata)
        self.closing_text = "\n\n".join(p for p in paragraphs if not p.startswith(headings))

        self._tasks: dict[str, TaskSpec] = {}
        for meta in metadata:
            task_id = meta["id"]
            spec_text = next((p for p in paragraphs if p.startswith(meta["heading"])), None)
            if spec_text is None:
                raise ConfigError(f"task_specs.txt has no paragraph for {meta['heading']}")
            rule = _TARGET_RULES[task_id]
            allowed = frozenset(
                k for k in (rule(o) for o in load_world(task_id).objects) if k is not None)
            self._tasks[task_id] = TaskSpec(
                id=task_id,
                name=meta["name"],
                spec_text=spec_text,
                allowed_actions=allowed,
                worker_description=meta["worker_description"],
                reminder=meta["reminder"],
                target_rule=rule,
            )
        logger.debug(f"Task registry loaded: {list(self._tasks)}")

    def __iter__(self):
        return (self._tasks[t] for t in TASK_ORDER if t in self._tasks)

    def get(self, task: str) -> TaskSpec:
        """Look a task up by id ("separate") or prompt name ("separating")."""
        key = task.strip().lower()
        if key in self._tasks:
            return self._tasks[key]
        for spec in self._tasks.values():
            if spec.name == key:
                return spec
        raise UnknownTask(task)

    @property
    def task_specs_text(self) -> str:
        """Task specifications exactly as the fixture lays them out."""
        return "\n\n".join([t.spec_text for t in self] + [self.closing_text])

    def oracle_actions(self, task_id: str, state: WorldState) -> list[ActionCommand]:
        task = self.get(task_id)
        on_table = [o for o in state.objects if o.location.place is Place.ON_TABLE]

        if task.ordered:
            pointed = {p.lower() for p in state.pointed}
            pending = [o for o in on_table if task.relevance(o) and o.label.lower() not in pointed]
            yellows = [o for o in pending if o.color is Color.YELLOW]
            reds = [o for o in pending if o.color is Color.RED]
            return [ActionCommand(ActionKind.POINT, o.label) for o in yellows + reds]

        return [ActionCommand(task.target_rule(o), o.label) for o in on_table if task.relevance(o)]

    def relevant_objects(self, task_id: str, labels: list[str]) -> list[str]:
        task = self.get(task_id)
        inventory = load_world(task.id)
        relevant = []
        for label in labels:
            obj = inventory.find(label)
            if obj is not None and task.relevance(obj):
                relevant.append(label)
        return relevant

    def is_complete(self, task_id: str, state: WorldState) -> bool:
        return self.get(task_id).goal(state)

    def intervention_index(self, task_id: str) -> int:
        task = self.get(task_id)
        required = len(self.oracle_actions(task.id, load_world(task.id)))
        return max(1, math.ceil(required / 2))


@lru_cache(maxsize=1)
def get_registry() -> TaskRegistry:
    return TaskRegistry()


def oracle_actions(task_id: str, state: WorldState) -> list[ActionCommand]:
    return get_registry().oracle_actions(task_id, state)


def relevant_objects(task_id: str, labels: list[str]) -> list[str]:
    return get_registry().relevant_objects(task_id, labels)


def is_complete(task_id: str, state: WorldState) -> bool:
    return get_registry().is_complete(task_id, state)


def intervention_index(task_id: str) -> int:
    return get_registry().intervention_index(task_id)
