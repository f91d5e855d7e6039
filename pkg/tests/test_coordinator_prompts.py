from coordinator_prompts import (
    COMMAND,
    INJECTION,
    PROBE_STATE,
    STEP,
    classify,
    declarative_lines,
    injection_message,
    parse_container_lines,
    probe_messages,
    step_message,
    task_command_message,
)
from memory import DeclarativeSnapshot


def test_step_message_shows_the_table(registry):
    text = step_message(registry.get("tower"), ["cube 4", "cube 5"])
    info = classify(text)
    assert (info.kind, info.task, info.objects) == (STEP, "tower", ["cube 4", "cube 5"])


def test_command_message_names_the_memory_protocol(registry):
    task = registry.get("arrange")
    assert classify(task_command_message(task, ["can"], True, True)).memory == "declarative"
    assert classify(task_command_message(task, ["can"], True, False)).memory == "working"
    info = classify(task_command_message(task, ["can"], False, False))
    assert (info.kind, info.memory) == (COMMAND, None)


def test_declarative_injection_round_trips(registry):
    snapshot = DeclarativeSnapshot({"Box 1": ["pear", "apple"], "Box 2": ["bowl"]}, ["banana", "cup"])
    text = injection_message(registry.get("separate"), "declarative", declarative_lines(snapshot))
    info = classify(text)
    assert (info.kind, info.memory) == (INJECTION, "declarative")
    assert parse_container_lines(text) == {
        "Box 1": ["pear", "apple"], "Box 2": ["bowl"], "Remaining Objects": ["banana", "cup"]}


def test_probe_headers(registry):
    state_probe, _ = probe_messages(registry.get("recipe"))
    assert classify(state_probe).kind == PROBE_STATE


def test_container_lines_tolerate_case_and_noise():
    assert parse_container_lines("Sure!\nbox 1: pear\nTOWER: cube 1, cube 2") == {
        "Box 1": ["pear"], "Tower": ["cube 1", "cube 2"]}
