"""Command-line entry point: batch runs, an interactive session, reports and log inspection.

Exit codes: 0 success, 1 configuration or usage error, 2 backend unreachable
(or invalid trials), 3 internal error.
"""
import logging
import sys
from pathlib import Path

import click
from sqlalchemy.exc import SQLAlchemyError

from config import ConfigError, load_experiment_file
from eval_harness import (
    ExperimentConfig,
    HarnessError,
    NoValidTrials,
    aggregate,
    format_table,
    load_run,
    merge_reports,
    run_experiment,
    score_retention,
)
from llm_backends import BackendError, GenerationParams, TransportError, create_backend
from memory import EmptyLog, load_log, project_world, snapshot_from_log
from orchestrator import (
    NoActiveTask,
    StepStatus,
    command_task,
    ground_truth,
    init,
    probe_retention,
    step,
    write_events,
    write_transcript,
)
from task_registry import get_registry
from world_sim import UnknownTask, visible_objects

logger = logging.getLogger(__name__)

EXIT_CONFIG = 1
EXIT_TRANSPORT = 2
EXIT_INTERNAL = 3

INTERACTIVE_HELP = """Commands:
  start <task>      command a task (also: switch <task>, resume <task>)
  step [n]          run n steps of the active task (default 1)
  finish            step the active task until it completes
  probe [task]      ask the coordinator for the task state and score it
  state             show the table and container contents of the active task
  log [task]        print the declarative log of a task
  help              show this text
  quit              save the transcript and leave"""


def _configure_logging(verbose):
    level = {0: logging.WARNING, 1: logging.INFO}.get(verbose, logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


@click.group()
@click.option("-v", "--verbose", count=True, help="-v for INFO, -vv for DEBUG.")
def cli(verbose):
    """Dual-LLM coordinator/worker agent with procedural, working and declarative memory."""
    _configure_logging(verbose)


def _experiment_settings(config_path, overrides, params):
    data = load_experiment_file(config_path) if config_path else {}
    data.update({k: v for k, v in overrides.items() if v is not None})
    params = {k: v for k, v in params.items() if v is not None}
    if params:
        data["params"] = {**data.get("params", {}), **params}
    return data


@cli.command()
@click.option("--config", "config_path", type=click.Path(), help="Experiment file (JSON).")
@click.option("--mode", help="standalone, consecutive or intervened.")
@click.option("--trials", type=int)
@click.option("--memory", type=click.Choice(["on", "off", "both"]))
@click.option("--backend", help="mock, mock:forgetful[:N], mock:trace:<path>, openai[:model], local[:model].")
@click.option("--worker-backend")
@click.option("--seed", type=int)
@click.option("--workers", type=int, help="Trials run in parallel.")
@click.option("--task", "tasks", multiple=True, help="Restrict the run to these tasks.")
@click.option("--strict/--lenient", "strict", default=None, help="Reject replies with several actions.")
@click.option("--scoring", type=click.Choice(["jaccard", "exact"]))
@click.option("--temperature", type=float)
@click.option("--top-p", type=float)
@click.option("--max-tokens", type=int)
@click.option("--out", "out_dir", default="runs/latest", show_default=True, type=click.Path())
@click.pass_context
def run(ctx, config_path, mode, trials, memory, backend, worker_backend, seed, workers, tasks, strict,
        scoring, temperature, top_p, max_tokens, out_dir):
    """Run an experiment and print its metrics table."""
    try:
        data = _experiment_settings(
            config_path,
            {"mode": mode, "trials": trials, "backend": backend, "worker_backend": worker_backend,
             "seed": seed, "workers": workers, "tasks": list(tasks) or None,
             "strict_single_action": strict, "retention_scoring": scoring},
            {"temperature": temperature, "top_p": top_p, "max_tokens": max_tokens},
        )
        memory = memory or data.get("memory", True)
        arms = [True, False] if memory == "both" else [memory]
        configs = [ExperimentConfig.from_dict({**data, "memory": flag}) for flag in arms]
    except ConfigError as e:
        click.echo(f"Configuration error: {e}", err=True)
        ctx.exit(EXIT_CONFIG)

    out_dir = Path(out_dir)
    try:
        runs = []
        for config in configs:
            run_dir = out_dir if len(configs) == 1 else out_dir / f"memory-{'on' if config.memory else 'off'}"
            runs.append(run_experiment(config, run_dir))
    except ConfigError as e:
        click.echo(f"Configuration error: {e}", err=True)
        ctx.exit(EXIT_CONFIG)
    except NoValidTrials as e:
        click.echo(f"No usable results: {e}", err=True)
        ctx.exit(EXIT_TRANSPORT)
    except Exception as e:
        logger.exception("Run failed")
        click.echo(f"Internal error: {e}", err=True)
        ctx.exit(EXIT_INTERNAL)

    for result in runs:
        click.echo(format_table(result.table))
    if len(runs) > 1:
        merge_reports([r.table for r in runs], out_dir)
        click.echo(f"Comparison written to {out_dir / 'comparison.csv'}")

    invalid = sum(r.table.invalid_trials for r in runs)
    ctx.exit(EXIT_TRANSPORT if invalid else 0)


def _echo_outcome(agent, outcome, before):
    if outcome.status is StepStatus.FAILURE:
        click.echo(f"  failed ({outcome.reason.value}): {outcome.detail}")
        return
    for action in outcome.actions:
        click.echo(f"  action: {action}")
    after = set(visible_objects(agent.world))
    moved = [label for label in before if label not in after]
    if moved:
        click.echo(f"  left the table: {', '.join(moved)}")
    if outcome.actions:
        click.echo("  log: " + agent.logs[agent.active_task].entries[-1].render().replace("\n", "\n       "))
    if outcome.outside_working_memory:
        click.echo(f"  outside working memory: {', '.join(outcome.outside_working_memory)}")
    if outcome.status is StepStatus.TASK_COMPLETE:
        click.echo(f"  task {agent.active_task} complete")


def _echo_state(agent):
    if agent.active_task is None:
        click.echo("No active task.")
        return
    view = project_world(agent.world)
    click.echo(f"Task: {agent.active_task}")
    click.echo(f"Objects on the table: {', '.join(view.remaining)}")
    for name, labels in view.container_contents.items():
        click.echo(f"{name}: {', '.join(labels)}")


def _steps(agent, count):
    if agent.active_task is None:
        raise NoActiveTask("command a task first")
    for _ in range(count):
        before = visible_objects(agent.world)
        outcome = step(agent)
        _echo_outcome(agent, outcome, before)
        if outcome.status is StepStatus.TASK_COMPLETE:
            return


def _handle(agent, words):
    command, args = words[0].lower(), words[1:]
    if command in ("start", "switch", "resume"):
        if not args:
            click.echo(f"{command} needs a task name")
            return
        command_task(agent, " ".join(args))
        click.echo(f"Active task: {agent.active_task}")
    elif command == "step":
        _steps(agent, int(args[0]) if args and args[0].isdigit() else 1)
    elif command == "finish":
        _steps(agent, len(agent.world.objects) if agent.world else 0)
    elif command == "probe":
        task_id = agent.registry.get(" ".join(args)).id if args else agent.active_task
        if task_id is None:
            raise NoActiveTask("command a task first")
        reported_state, reported_remaining = probe_retention(agent, task_id)
        truth_state, truth_remaining = ground_truth(agent, task_id)
        click.echo(f"task retention: {score_retention(reported_state, truth_state):.2f}")
        click.echo(f"environment retention: {score_retention(reported_remaining, truth_remaining):.2f}")
    elif command == "state":
        _echo_state(agent)
    elif command == "log":
        task_id = agent.registry.get(" ".join(args)).id if args else agent.active_task
        log = agent.logs.get(task_id) if task_id else None
        click.echo(log.render() if log and log.entries else "(empty log)")
    else:
        click.echo(INTERACTIVE_HELP)


@cli.command()
@click.option("--backend", default="mock:oracle", show_default=True)
@click.option("--worker-backend")
@click.option("--memory", type=click.Choice(["on", "off"]), default="on", show_default=True)
@click.option("--strict/--lenient", default=True)
@click.option("--out", "out_dir", default="runs/interactive", show_default=True, type=click.Path())
@click.pass_context
def interactive(ctx, backend, worker_backend, memory, strict, out_dir):
    """Issue, interrupt and resume task commands by hand."""
    try:
        coordinator = create_backend(backend)
        worker = create_backend(worker_backend or ("mock:oracle" if backend.startswith("mock") else backend))
        agent = init(coordinator, worker, memory_enabled=memory == "on", strict_single_action=strict,
                     params=GenerationParams(), log_dir=out_dir)
    except ConfigError as e:
        click.echo(f"Configuration error: {e}", err=True)
        ctx.exit(EXIT_CONFIG)

    click.echo(INTERACTIVE_HELP)
    code = 0
    try:
        while True:
            try:
                line = click.prompt("nicol", default="", show_default=False, prompt_suffix="> ")
            except click.Abort:
                break
            words = line.split()
            if not words:
                continue
            if words[0].lower() in ("quit", "exit"):
                break
            try:
                _handle(agent, words)
            except (UnknownTask, NoActiveTask) as e:
                click.echo(f"Error: {e}")
            except TransportError as e:
                click.echo(f"Backend unreachable: {e}", err=True)
                code = EXIT_TRANSPORT
                break
            except BackendError as e:
                logger.warning(f"Interactive command failed: {e}")
                click.echo(f"Backend error: {e}")
    finally:
        transcript = write_transcript(agent, Path(out_dir) / "transcript.txt")
        write_events(agent.events, Path(out_dir) / "events.ndjson")
    click.echo(f"Transcript saved to {transcript}")
    ctx.exit(code)


@cli.command()
@click.argument("run_dirs", nargs=-1, type=click.Path())
@click.option("--out", "out_dir", type=click.Path(), help="Where to write comparison.csv (default: first run).")
@click.pass_context
def report(ctx, run_dirs, out_dir):
    """Merge one or more run directories into a comparison report."""
    if not run_dirs:
        click.echo("Give at least one run directory.", err=True)
        ctx.exit(EXIT_CONFIG)

    tables = []
    try:
        for run_dir in run_dirs:
            tables.append(aggregate(load_run(run_dir)))
    except (FileNotFoundError, SQLAlchemyError, HarnessError) as e:
        click.echo(f"Cannot read run data: {e}", err=True)
        ctx.exit(EXIT_CONFIG)

    for table in tables:
        click.echo(format_table(table))
    paths = merge_reports(tables, out_dir or run_dirs[0])
    click.echo(f"Comparison written to {paths[0]}")
    ctx.exit(0)


@cli.command("inspect-log")
@click.argument("log_dir", type=click.Path())
@click.argument("task")
@click.pass_context
def inspect_log(ctx, log_dir, task):
    """Print a task log and the container state it records."""
    log_dir = Path(log_dir)
    if (log_dir / "logs").is_dir():
        log_dir = log_dir / "logs"
    try:
        log = load_log(log_dir, get_registry().get(task).id)
        snapshot = snapshot_from_log(log)
    except UnknownTask as e:
        click.echo(f"Unknown task: {e}", err=True)
        ctx.exit(EXIT_CONFIG)
    except EmptyLog as e:
        click.echo(f"No log: {e}", err=True)
        ctx.exit(EXIT_CONFIG)

    click.echo(log.render())
    click.echo("")
    click.echo(f"{len(log)} entries, {log.relocation_count} relocations")
    click.echo(f"Task state: {snapshot.describe()}")
    click.echo(f"Remaining Objects: {', '.join(snapshot.remaining)}")
    ctx.exit(0)


@cli.command()
@click.option("--behavior", default=None, help="oracle, forgetful:N or trace:<path> (default MOCK_BEHAVIOR).")
@click.option("--port", default=5000, show_default=True, type=int)
def serve(behavior, port):
    """Serve the mock backend over the OpenAI chat-completions API."""
    from main import create_app

    create_app(behavior).run(host="127.0.0.1", port=port)


def main(argv=None):
    try:
        code = cli.main(args=argv, prog_name="nicol-memory", standalone_mode=False)
    except click.UsageError as e:
        e.show()
        return EXIT_CONFIG
    except click.Abort:
        return EXIT_CONFIG
    return code or 0


if __name__ == "__main__":
    sys.exit(main())
