from pathlib import Path

import pytest

from action_grammar import ActionKind, command
from memory import TaskLog, append_entry
from mock_llm import MockBackend
from task_registry import get_registry
from world_sim import apply_action, load_world

GOLDEN_DIR = Path(__file__).parent / "golden"


@pytest.fixture
def registry():
    return get_registry()


@pytest.fixture
def golden():
    def read(name):
        return (GOLDEN_DIR / name).read_text(encoding="utf-8").rstrip("\n")
    return read


@pytest.fixture
def oracle():
    return MockBackend("oracle")


def run_actions(task_id, actions):
    """Apply (kind, label) pairs to a fresh world, logging each one."""
    world = load_world(task_id)
    log = TaskLog(task_id)
    for kind, label in actions:
        action = command(kind, label)
        world = apply_action(world, action)
        log = append_entry(log, action, world)
    return world, log


@pytest.fixture
def prompt5_log():
    _, log = run_actions("separate", [
        (ActionKind.MOVE_TO_BOX_1, "pear"),
        (ActionKind.MOVE_TO_BOX_1, "apple"),
        (ActionKind.MOVE_TO_BOX_2, "bowl"),
    ])
    return log
