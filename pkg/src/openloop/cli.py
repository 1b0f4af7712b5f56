"""Command line entry point.

`openloop run --config cfg.json` drives the loop in batch mode;
--interactive prompts for a task before each run, --serve exposes the
HTTP API and event stream while the loop runs, and --dry-run validates
the config and prints the resolved plan without touching the network.
"""

from __future__ import annotations

import argparse
import sys
import threading
from dataclasses import replace

from . import __version__
from .config import Config, load_config
from .errors import BindError, ConfigError
from .events import EventBus
from .orchestrator import Orchestrator, render_preview
from .service import Service


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="openloop", description="Open-ended agent loop")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run the agent loop")
    run.add_argument("--config", required=True, help="path to JSON config")
    run.add_argument("--runs", type=int, default=None, help="override loop.runs")
    run.add_argument(
        "--interactive",
        action="store_true",
        help="prompt for a task before each run (empty line lets the agent choose)",
    )
    run.add_argument("--serve", action="store_true", help="expose the HTTP API while running")
    run.add_argument("--port", type=int, default=None, help="override service.port")
    run.add_argument("--workspace", default=None, help="override the workspace directory")
    run.add_argument(
        "--dry-run",
        action="store_true",
        help="validate config and print the plan without running anything",
    )
    return parser


def apply_overrides(config: Config, args: argparse.Namespace) -> Config:
    if args.runs is not None and args.runs < 1:
        raise ConfigError("--runs must be at least 1")
    if args.port is not None:
        if not 0 <= args.port <= 65535:
            raise ConfigError("--port must be in 0..65535")
        config = replace(config, service=replace(config.service, port=args.port))
    return config


def interactive_provider(stdin=None):
    """Reads one task line per run boundary; an empty line defers to
    the agent's own task generation, end of input stops the loop."""
    stream = stdin if stdin is not None else sys.stdin

    def provide(index: int) -> str | None:
        print(f"task for run {index} (empty = agent's choice): ", end="", flush=True)
        line = stream.readline()
        if line == "":
            print()
            raise EOFError
        return line.strip() or None

    return provide


def _tail_events(bus: EventBus, out) -> None:
    last = 0
    while True:
        batch = bus.wait_since(last, timeout=0.5)
        fresh = [e for e in batch if e.seq > last]
        for event in fresh:
            last = event.seq
            line = _format_event(event)
            if line is not None:
                print(line, file=out, flush=True)
        if bus.closed and not fresh:
            return


def _format_event(event) -> str | None:
    p = event.payload
    if event.kind == "run_started":
        return f"run {event.run_id} started"
    if event.kind == "task_generated":
        dup = f" (repeat of {p['duplicate_of']})" if p.get("duplicate_of") else ""
        return f"run {event.run_id} task [{p['origin']}]{dup}: {p['task']}"
    if event.kind == "run_completed":
        outcome = p["record"]["outcome"]
        if len(outcome) > 100:
            outcome = outcome[:100] + "..."
        return f"run {event.run_id} {p['status']} after {p['steps_used']} steps: {outcome}"
    if event.kind == "error":
        return f"run {event.run_id} failed: {p['error']}"
    if event.kind == "awaiting_input":
        return "loop paused; waiting for resume"
    if event.kind == "loop_finished":
        return (
            f"loop finished: {p['runs_attempted']} attempted, "
            f"{p['runs_completed']} completed, {p['errors']} errors"
        )
    return None


def cmd_run(args: argparse.Namespace) -> int:
    config = apply_overrides(load_config(args.config, args.workspace), args)
    if args.dry_run:
        # Validate only: render the system prompt the next run would
        # start from, with no model call and no file created.
        print(render_preview(config))
        return 0

    provider = interactive_provider() if args.interactive else None
    orchestrator = Orchestrator(config, input_provider=provider)
    tail = threading.Thread(
        target=_tail_events, args=(orchestrator.bus, sys.stdout), daemon=True
    )
    tail.start()

    service = None
    if args.serve:
        service = Service(
            orchestrator,
            host=config.service.host,
            port=config.service.port,
            static_dir=config.service.static_dir,
        )
        service.start()
        print(f"serving on {service.url}", flush=True)

    try:
        summary = orchestrator.run_loop(args.runs)
        if service is not None:
            print("loop finished; serving until interrupted", flush=True)
            threading.Event().wait()
        return 0 if summary.errors == 0 else 1
    except KeyboardInterrupt:
        return 130
    finally:
        if service is not None:
            service.shutdown()
        else:
            orchestrator.bus.close()
        tail.join(timeout=2)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(args)
        parser.error(f"unknown command {args.command!r}")
        return 2
    except (ConfigError, BindError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
