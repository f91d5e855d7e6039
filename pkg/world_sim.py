"""Simulated tabletop: object state, manipulation actions, label perception."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, replace
from enum import Enum
from functools import lru_cache
from pathlib import Path

from action_grammar import ActionCommand, ActionKind
from config import DATA_DIR

logger = logging.getLogger(__name__)

INVENTORY_PATH = DATA_DIR / "inventories.csv"


class WorldError(Exception):
    pass


class UnknownTask(WorldError):
    pass


class UnknownObject(WorldError):
    pass


class NotOnTable(WorldError):
    pass


class NotAManipulation(WorldError):
    pass


class Color(str, Enum):
    RED = "red"
    YELLOW = "yellow"
    ORANGE = "orange"
    GREEN = "green"
    BLUE = "blue"
    BLACK = "black"
    WHITE = "white"


class Category(str, Enum):
    FRUIT = "fruit"
    KITCHENWARE = "kitchenware"
    CONTAINER = "container"
    TOY = "toy"
    INGREDIENT = "ingredient"
    CUBE = "cube"


class Place(str, Enum):
    ON_TABLE = "on_table"
    IN_BOX_1 = "in_box_1"
    IN_BOX_2 = "in_box_2"
    IN_BOWL = "in_bowl"
    ON_TOWER = "on_tower"
    WITH_USER = "with_user"


@dataclass(frozen=True)
class Location:
    place: Place
    level: int | None = None

    def __post_init__(self):
        if self.place is Place.ON_TOWER and (self.level is None or self.level < 1):
            raise ValueError("tower locations need a positive level")


ON_TABLE = Location(Place.ON_TABLE)
IN_BOX_1 = Location(Place.IN_BOX_1)
IN_BOX_2 = Location(Place.IN_BOX_2)
IN_BOWL = Location(Place.IN_BOWL)
WITH_USER = Location(Place.WITH_USER)


def on_tower(level: int) -> Location:
    return Location(Place.ON_TOWER, level)


# Where each relocating action drops its object; put_on_tower is computed.
ACTION_DESTINATIONS = {
    ActionKind.MOVE_TO_BOX_1: IN_BOX_1,
    ActionKind.MOVE_TO_BOX_2: IN_BOX_2,
    ActionKind.PLACE_IN_BOWL: IN_BOWL,
    ActionKind.GIVE: WITH_USER,
}


@dataclass(frozen=True)
class ObjectInstance:
    label: str
    category: Category
    location: Location = ON_TABLE
    color: Color | None = None

    def __post_init__(self):
        is_cube = "cube" in self.label.lower()
        if (self.category is Category.CUBE) != is_cube:
            raise ValueError(f"category cube must match cube naming: {self.label}")
        if self.category is Category.CUBE and self.color is None:
            raise ValueError(f"cube without color: {self.label}")


@dataclass(frozen=True)
class WorldState:
    """Immutable world snapshot.

    ``relocated`` keeps the order objects left the table so container contents
    can be listed in arrival order; ``pointed`` is the point-action history.
    """

    objects: tuple[ObjectInstance, ...] = ()
    pointed: tuple[str, ...] = ()
    relocated: tuple[str, ...] = ()

    def __post_init__(self):
        labels = [o.label.lower() for o in self.objects]
        if len(labels) != len(set(labels)):
            raise ValueError("object labels must be unique within a world")

    @property
    def labels(self) -> list[str]:
        return [o.label for o in self.objects]

    def find(self, label: str) -> ObjectInstance | None:
        wanted = " ".join(label.split()).lower()
        for obj in self.objects:
            if obj.label.lower() == wanted:
                return obj
        return None

    def location_of(self, label: str) -> Location:
        obj = self.find(label)
        if obj is None:
            raise UnknownObject(label)
        return obj.location

    def tower_height(self) -> int:
        return max((o.location.level for o in self.objects if o.location.place is Place.ON_TOWER), default=0)

    def contents(self, place: Place) -> list[str]:
        """Labels at ``place`` in arrival order (bottom-to-top for the tower)."""
        if place is Place.ON_TOWER:
            stacked = [o for o in self.objects if o.location.place is Place.ON_TOWER]
            return [o.label for o in sorted(stacked, key=lambda o: o.location.level)]
        here = {o.label for o in self.objects if o.location.place is place}
        return [label for label in self.relocated if label in here]

    def with_location(self, label: str, location: Location) -> WorldState:
        objects = tuple(replace(o, location=location) if o.label == label else o for o in self.objects)
        return replace(self, objects=objects, relocated=self.relocated + (label,))


def visible_objects(state: WorldState) -> list[str]:
    """What the detector would report: labels still on the table, insertion order."""
    return [o.label for o in state.objects if o.location == ON_TABLE]


def apply_action(state: WorldState, action: ActionCommand) -> WorldState:
    if action.is_memory_call:
        raise NotAManipulation(f"{action.kind.value} does not act on the world")

    target = state.find(action.argument)
    if target is None:
        raise UnknownObject(f"no object named {action.argument!r} in the world")
    if target.location != ON_TABLE:
        raise NotOnTable(f"{target.label} is no longer on the table")

    if action.kind is ActionKind.POINT:
        return replace(state, pointed=state.pointed + (target.label,))
    if action.kind is ActionKind.PUT_ON_TOWER:
        return state.with_location(target.label, on_tower(state.tower_height() + 1))
    return state.with_location(target.label, ACTION_DESTINATIONS[action.kind])


@lru_cache(maxsize=None)
def _read_inventories(path: str) -> dict[str, tuple[ObjectInstance, ...]]:
    inventories: dict[str, list[ObjectInstance]] = {}
    with open(path, newline="", encoding="utf-8") as handle:
        for row in csv.DictReader(handle):
            color = Color(row["color"]) if row["color"] else None
            obj = ObjectInstance(label=row["label"], category=Category(row["category"]), color=color)
            inventories.setdefault(row["task"], []).append(obj)
    logger.debug(f"Loaded inventories for {sorted(inventories)} from {path}")
    return {task: tuple(objs) for task, objs in inventories.items()}


def load_world(task_id: str, inventory_path: Path | str = INVENTORY_PATH) -> WorldState:
    inventories = _read_inventories(str(inventory_path))
    if task_id not in inventories:
        raise UnknownTask(task_id)
    return WorldState(objects=inventories[task_id])
