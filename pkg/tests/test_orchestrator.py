import pytest

from action_grammar import ActionKind
from memory import project_world, snapshot_from_log
from mock_llm import MockBackend, TraceBackend
from orchestrator import (
    FailureReason,
    NoActiveTask,
    StepStatus,
    command_task,
    ground_truth,
    init,
    probe_retention,
    retrieve_declarative,
    run_steps,
    step,
)
from task_registry import TASK_ORDER
from world_sim import load_world

from conftest import run_actions


def make_ctx(coordinator=None, memory=True, strict=True, **kwargs):
    return init(coordinator or MockBackend(), MockBackend(), memory_enabled=memory,
                strict_single_action=strict, **kwargs)


def finish(ctx, task_id):
    command_task(ctx, task_id)
    return run_steps(ctx, len(ctx.world_for(task_id).objects))


def last_user_messages(ctx, count):
    return [m.content for m in ctx.coordinator.history if m.role == "user"][-count:]


def test_system_prompt_holds_procedural_memory(registry):
    ctx = make_ctx()
    prompt = ctx.coordinator.system_prompt
    for task in registry:
        assert task.spec_text in prompt
    for kind in ActionKind:
        assert f"<{kind.value}(" in prompt
    assert ctx.active_task is None and ctx.logs == {}


def test_memory_off_omits_memory_functions():
    prompt = make_ctx(memory=False).coordinator.system_prompt
    assert "<retrieve_working_memory(" not in prompt
    assert "<retrieve_declarative_memory(" not in prompt


def test_fresh_command_injects_working_memory():
    ctx = make_ctx()
    command_task(ctx, "separate")
    assert ctx.active_task == "separate"
    assert ctx.working_memory["separate"].selective_objects == ["apple", "banana", "cup", "bowl", "pear"]
    injection = last_user_messages(ctx, 1)[0]
    assert injection.startswith("Memory injection: working memory (separating)")
    assert "Selective Objects: apple, banana, cup, bowl, pear" in injection


def test_resumed_command_injects_declarative_then_working_memory():
    ctx = make_ctx()
    world, log = run_actions("separate", [
        (ActionKind.MOVE_TO_BOX_1, "pear"),
        (ActionKind.MOVE_TO_BOX_1, "apple"),
        (ActionKind.MOVE_TO_BOX_2, "bowl"),
    ])
    ctx.worlds["separate"], ctx.logs["separate"] = world, log

    command_task(ctx, "separate")
    declarative, working = last_user_messages(ctx, 2)
    assert "Box 1: pear, apple" in declarative
    assert "Box 2: bowl" in declarative
    assert "Remaining Objects: banana, cup, baseball" in declarative
    assert "Task State: Box 1: pear, apple; Box 2: bowl" in working
    assert ctx.working_memory["separate"].selective_objects == ["banana", "cup"]


def test_declarative_retrieval_asks_once_per_container_then_for_the_table():
    ctx = make_ctx()
    _, log = run_actions("separate", [
        (ActionKind.MOVE_TO_BOX_1, "pear"),
        (ActionKind.MOVE_TO_BOX_2, "bowl"),
    ])
    ctx.logs["separate"] = log

    snapshot = retrieve_declarative(ctx, ctx.registry.get("separate"))
    assert ctx.worker.calls == 3
    assert snapshot.container_contents == {"Box 1": ["pear"], "Box 2": ["bowl"]}
    assert snapshot.remaining == ["apple", "banana", "cup", "baseball"]


def test_switching_tasks_keeps_the_paused_log():
    ctx = make_ctx()
    command_task(ctx, "separate")
    run_steps(ctx, 2)
    paused = ctx.logs["separate"]
    finish(ctx, "tower")
    assert ctx.logs["separate"] is paused
    assert len(paused) == 2


def test_step_executes_the_next_oracle_action():
    ctx = make_ctx()
    command_task(ctx, "separate")
    run_steps(ctx, 2)
    outcome = step(ctx)
    assert outcome.status is StepStatus.EXECUTED
    assert str(outcome.action) == "<move_to_box_2(cup)>"


def test_step_needs_an_active_task():
    with pytest.raises(NoActiveTask):
        step(make_ctx())


def test_batch_reply_is_rejected_in_strict_mode():
    ctx = make_ctx(TraceBackend(["OK", "<point(banana)> <point(lemon)>"]), memory=False)
    command_task(ctx, "point")
    outcome = step(ctx)
    assert outcome.reason is FailureReason.BATCH_VIOLATION
    assert ctx.worlds["point"].pointed == ()
    assert ctx.failures["point"] == ["batch_violation"]


def test_batch_reply_runs_in_lenient_mode():
    ctx = make_ctx(TraceBackend(["OK", "<point(banana)> <point(lemon)>"]), memory=False, strict=False)
    command_task(ctx, "point")
    outcome = step(ctx)
    assert outcome.status is StepStatus.EXECUTED
    assert ctx.worlds["point"].pointed == ("banana", "lemon")
    assert len(ctx.logs["point"]) == 2


def test_prose_reply_fails_after_one_correction():
    ctx = make_ctx(TraceBackend(["OK", "Let me think about it.", "Still thinking."]), memory=False)
    command_task(ctx, "separate")
    outcome = step(ctx)
    assert outcome.reason is FailureReason.PARSE
    assert ctx.failures["separate"] == ["parse", "parse"]
    assert last_user_messages(ctx, 1)[0].startswith("Correction (separating):")


def test_invalid_action_is_corrected_once():
    ctx = make_ctx(TraceBackend(["OK", "<move_to_box_1(kiwi)>", "<move_to_box_1(apple)>"]), memory=False)
    command_task(ctx, "separate")
    outcome = step(ctx)
    assert outcome.status is StepStatus.EXECUTED
    assert ctx.failures["separate"] == ["invalid_action"]


def test_exhausted_trace_is_a_backend_failure():
    ctx = make_ctx(TraceBackend(["OK"]), memory=False)
    command_task(ctx, "tower")
    assert step(ctx).reason is FailureReason.BACKEND


def test_memory_call_during_a_step_is_served_without_using_the_slot():
    replies = ["OK", "<retrieve_working_memory(separating)>", "<move_to_box_1(apple)>"]
    ctx = make_ctx(TraceBackend(replies))
    command_task(ctx, "separate")
    outcome = step(ctx)
    assert str(outcome.action) == "<move_to_box_1(apple)>"
    assert "separate" in ctx.working_memory


def test_actions_outside_working_memory_are_flagged():
    replies = ["<retrieve_working_memory(separating)>", "OK", "<move_to_box_1(baseball)>"]
    ctx = make_ctx(TraceBackend(replies))
    command_task(ctx, "separate")
    outcome = step(ctx)
    assert outcome.outside_working_memory == ("baseball",)
    assert ctx.events[-1]["outside_working_memory"] == ["baseball"]


def test_memory_off_never_calls_the_worker():
    worker = MockBackend()
    ctx = init(MockBackend(), worker, memory_enabled=False)
    for task_id in TASK_ORDER:
        finish(ctx, task_id)
        probe_retention(ctx, task_id)
    assert worker.calls == 0
    assert all(ctx.registry.is_complete(t, ctx.worlds[t]) for t in TASK_ORDER)


@pytest.mark.parametrize("task_id", TASK_ORDER)
def test_log_tracks_the_world_after_every_step(task_id):
    ctx = make_ctx()
    command_task(ctx, task_id)
    while True:
        outcome = step(ctx)
        assert snapshot_from_log(ctx.logs[task_id]) == project_world(ctx.worlds[task_id])
        if outcome.status is not StepStatus.EXECUTED:
            break
    assert outcome.status is StepStatus.TASK_COMPLETE


def _oracle_final_world(task_id):
    ctx = make_ctx()
    finish(ctx, task_id)
    return ctx.worlds[task_id]


@pytest.mark.parametrize("task_id", TASK_ORDER)
@pytest.mark.parametrize("interrupt_at", [1, 2, 3])
def test_resumed_task_ends_like_an_uninterrupted_one(task_id, interrupt_at):
    other = "tower" if task_id != "tower" else "separate"
    ctx = make_ctx()
    command_task(ctx, task_id)
    run_steps(ctx, interrupt_at)
    finish(ctx, other)
    finish(ctx, task_id)
    assert ctx.worlds[task_id] == _oracle_final_world(task_id)
    assert not ctx.failures


def test_probe_after_separating_run():
    ctx = make_ctx()
    finish(ctx, "separate")
    state, remaining = probe_retention(ctx, "separate")
    assert {k: set(v) for k, v in state.items()} == {"Box 1": {"apple", "banana", "pear"}, "Box 2": {"cup", "bowl"}}
    assert remaining == ["baseball"]
    assert ctx.worlds["separate"] == _oracle_final_world("separate")


def test_probe_after_pointing_run_reports_all_six_objects():
    ctx = make_ctx()
    finish(ctx, "point")
    _, remaining = probe_retention(ctx, "point")
    assert sorted(remaining) == sorted(load_world("point").labels)


def test_forgetful_probe_differs_from_truth():
    ctx = make_ctx(MockBackend("forgetful", window=2))
    finish(ctx, "separate")
    state, _ = probe_retention(ctx, "separate")
    truth, _ = ground_truth(ctx, "separate")
    assert state != truth


def test_logs_are_written_per_task(tmp_path):
    ctx = make_ctx(log_dir=tmp_path)
    finish(ctx, "recipe")
    text = (tmp_path / "logs" / "recipe.log").read_text()
    assert text.count("Log Entry:") == 3
    assert "Given: 1. banana 2. bowl 3. jello" in text
