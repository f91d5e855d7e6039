import random
import string

import pytest
from hypothesis import given
from hypothesis import strategies as st

from action_grammar import (
    ActionCommand,
    ActionKind,
    EmptyArgument,
    command,
    parse_reply,
    render,
)

LABELS = [
    "apple", "banana", "cup", "bowl", "baseball", "pear", "can", "lemon", "orange", "jello",
    "cube 1", "cube 2", "cube 3", "cube 4", "cube 5", "cube 6", "separating", "pointing",
    "tower", "red apple",
]

label_text = st.text(alphabet=string.ascii_lowercase + string.digits + " _-", min_size=1, max_size=20) \
    .map(str.strip).filter(bool)


@pytest.mark.parametrize("kind", list(ActionKind))
@pytest.mark.parametrize("label", LABELS)
def test_render_parse_round_trip(kind, label):
    action = ActionCommand(kind, label)
    parsed = parse_reply(render(action))
    assert parsed.commands == [action]
    assert parsed.errors == []
    assert parsed.prose == ""


def test_render_uses_angle_bracket_syntax():
    assert render(command("move_to_box_1", "banana")) == "<move_to_box_1(banana)>"
    assert str(command(ActionKind.PUT_ON_TOWER, "cube 1")) == "<put_on_tower(cube 1)>"


def test_render_rejects_empty_argument():
    with pytest.raises(EmptyArgument):
        render(ActionCommand(ActionKind.POINT, "  "))


def test_commands_keep_source_order_and_prose():
    reply = "Sure. <point(banana)> then <point(lemon)> and done."
    parsed = parse_reply(reply)
    assert [c.argument for c in parsed.commands] == ["banana", "lemon"]
    assert parsed.prose == "Sure.  then  and done."


def test_memory_calls_are_separated_from_manipulations():
    parsed = parse_reply("<retrieve_working_memory(separating)> <move_to_box_1(pear)>")
    assert parsed.memory_calls == [ActionCommand(ActionKind.RETRIEVE_WORKING_MEMORY, "separating")]
    assert parsed.manipulations == [ActionCommand(ActionKind.MOVE_TO_BOX_1, "pear")]


@pytest.mark.parametrize("reply, reason", [
    ("<fly(banana)>", "unknown action fly"),
    ("<point banana>", "missing parenthesis"),
    ("<point()>", "empty argument"),
])
def test_bad_fragments_are_collected(reply, reason):
    parsed = parse_reply(f"{reply} <point(lemon)>")
    assert parsed.commands == [ActionCommand(ActionKind.POINT, "lemon")]
    assert len(parsed.errors) == 1
    assert parsed.errors[0].reason == reason


def test_plain_prose_has_no_commands():
    parsed = parse_reply("The task is complete.")
    assert parsed.commands == []
    assert parsed.errors == []
    assert parsed.prose == "The task is complete."


@given(st.lists(st.tuples(st.sampled_from(list(ActionKind)), label_text), max_size=6))
def test_concatenated_commands_parse_in_order(pairs):
    actions = [ActionCommand(kind, label) for kind, label in pairs]
    parsed = parse_reply(" ".join(render(a) for a in actions))
    assert parsed.commands == actions


def test_parser_never_raises_on_random_text():
    rng = random.Random(1234)
    alphabet = string.ascii_letters + string.digits + " <>()_,.\n"
    for _ in range(100_000):
        text = "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 40)))
        parsed = parse_reply(text)
        for action in parsed.commands:
            assert action.argument == action.argument.strip()
            assert action.argument
