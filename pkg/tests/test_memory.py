import pytest
from hypothesis import given
from hypothesis import strategies as st

from action_grammar import ActionKind
from memory import (
    FRESH_TASK_STATE,
    REMAINING,
    DeclarativeSnapshot,
    EmptyLog,
    EmptyReply,
    EmptyWorld,
    TaskLog,
    build_declarative_prompt,
    build_working_memory,
    build_working_memory_prompt,
    load_log,
    numbered,
    parse_log_text,
    parse_numbered,
    parse_object_list_reply,
    snapshot_from_log,
    write_log,
)
from world_sim import load_world, visible_objects

from conftest import run_actions


def test_first_entry_matches_published_log():
    _, log = run_actions("separate", [(ActionKind.MOVE_TO_BOX_1, "pear")])
    assert log.render() == (
        "Log Entry:\n"
        "Action: <move_to_box_1(pear)>\n"
        "Box 1: 1. pear\n"
        "Remaining Objects: 1. apple 2. banana 3. cup 4. bowl 5. baseball"
    )


def test_pointing_entry_keeps_remaining_unchanged():
    _, log = run_actions("point", [(ActionKind.POINT, "lemon")])
    entry = log.entries[0]
    assert entry.state_lines == (("Pointed", ("lemon",)),)
    assert len(entry.remaining) == 6


def test_working_memory_prompt_matches_golden(registry, golden):
    visible = visible_objects(load_world("separate"))
    assert build_working_memory_prompt(registry.get("separate"), visible) == golden("working_memory_separating.txt")


def test_pointing_working_memory_prompt_matches_golden(registry, golden):
    visible = visible_objects(load_world("point"))
    assert build_working_memory_prompt(registry.get("point"), visible) == golden("working_memory_pointing.txt")


def test_working_memory_prompt_needs_objects(registry):
    with pytest.raises(EmptyWorld):
        build_working_memory_prompt(registry.get("separate"), [])


def test_declarative_prompt_matches_golden(prompt5_log, golden):
    assert build_declarative_prompt(prompt5_log, "Box 1") == golden("declarative_box1.txt")


def test_declarative_prompt_for_remaining_objects(prompt5_log):
    prompt = build_declarative_prompt(prompt5_log, REMAINING)
    assert prompt.startswith(prompt5_log.render())
    assert "extract the final list of remaining objects on the table" in prompt


def test_declarative_prompt_needs_a_log():
    with pytest.raises(EmptyLog):
        build_declarative_prompt(TaskLog("separate"), "Box 1")


@pytest.mark.parametrize("reply, expected", [
    ("apple, banana, cup, bowl, pear", ["apple", "banana", "cup", "bowl", "pear"]),
    ("pear, apple", ["pear", "apple"]),
    ("pear, apple.", ["pear", "apple"]),
    (" cube 1 ,, cube 2 ", ["cube 1", "cube 2"]),
])
def test_parse_object_list_reply(reply, expected):
    assert parse_object_list_reply(reply) == expected


def test_blank_reply_is_an_error():
    with pytest.raises(EmptyReply):
        parse_object_list_reply("   ")


@given(st.lists(st.text(alphabet="abcdefghij xyz", min_size=1).map(str.strip).filter(bool), min_size=1))
def test_reply_parser_inverts_join(labels):
    assert parse_object_list_reply(", ".join(labels)) == labels


def test_snapshot_reads_latest_line_per_container(prompt5_log):
    snapshot = snapshot_from_log(prompt5_log)
    assert snapshot.container_contents == {"Box 1": ["pear", "apple"], "Box 2": ["bowl"]}
    assert snapshot.remaining == ["banana", "cup", "baseball"]


def test_snapshot_needs_a_log():
    with pytest.raises(EmptyLog):
        snapshot_from_log(TaskLog("tower"))


def test_numbered_lists_with_digit_labels():
    labels = ["cube 1", "cube 2", "cube 10"]
    assert numbered(labels) == "1. cube 1 2. cube 2 3. cube 10"
    assert parse_numbered(numbered(labels)) == labels


def test_log_files_round_trip(tmp_path, prompt5_log):
    path = write_log(prompt5_log, tmp_path)
    assert path.name == "separate.log"
    assert load_log(tmp_path, "separate") == prompt5_log
    assert parse_log_text("separate", path.read_text()) == prompt5_log


def test_appending_to_one_log_leaves_others_untouched(tmp_path, prompt5_log):
    write_log(prompt5_log, tmp_path)
    before = (tmp_path / "separate.log").read_bytes()
    _, tower_log = run_actions("tower", [(ActionKind.PUT_ON_TOWER, "cube 1")])
    write_log(tower_log, tmp_path)
    assert (tmp_path / "separate.log").read_bytes() == before


def test_working_memory_keeps_only_visible_selection(registry):
    wm = build_working_memory(registry.get("separate"), ["Apple", "kiwi", "pear"], ["apple", "banana", "pear"])
    assert wm.selective_objects == ["apple", "pear"]
    assert wm.task_state == FRESH_TASK_STATE
    assert wm.task_reminders == registry.get("separate").reminder


def test_working_memory_task_state_from_snapshot(registry):
    snapshot = DeclarativeSnapshot({"Box 1": ["pear", "apple"]}, ["banana"])
    wm = build_working_memory(registry.get("separate"), ["banana"], ["banana"], snapshot)
    assert wm.task_state == "Box 1: pear, apple"
