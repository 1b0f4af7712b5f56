"""Run lifecycle management.

The orchestrator owns the workspace jail, the memory store, the model
handle, and the event bus. Each run renders a fresh system prompt over
the latest memory digest, drains pending user feedback into the
transcript, generates a task, drives the episode, summarizes it into a
record, and persists both the record and the full transcript. Control
actions (pause, resume, step, stop) take effect at run boundaries, and
the loop thread is the only writer of the memory file.
"""

from __future__ import annotations

import json
import os
import threading
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from .config import SCRIPTED_SCHEME, Config
from .errors import ConfigError, OpenLoopError
from .events import EventBus
from .gateway import ChatGateway, ChatParams, ScriptedModel, ScriptEntry
from .goals import TaskSpec, apply_duplicate_policy, duplicate_notice, generate_task
from .memory import (
    MemoryStore,
    Transcript,
    digest,
    feedback_record,
    load_records,
    make_run_id,
    now_ts,
)
from .promptkit import (
    CURIOSITY_CLAUSE,
    DEFAULT_NUDGES,
    load_default_template,
    load_nudges,
    load_template,
    render_system_prompt,
)
from .react import STATUS_ABORTED, run_episode, summarize_run
from .toolbelt import Toolbelt, list_files, render_listing, resolve_jailed, tool_schema_text

WORKSPACE_LISTING_CAP = 2000

STATE_RUNNING = "running"
STATE_PAUSED = "paused"
STATE_STOPPED = "stopped"

CONTROL_COMMANDS = ("pause", "resume", "step", "stop")


def load_scripted(path: str | Path) -> ScriptedModel:
    """Build a playback model from a JSON file.

    The file holds an array whose items are either plain reply strings
    or objects {"reply": str, "contains": str | null}.
    """
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read script {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"script is not valid JSON: {exc}") from None
    if not isinstance(data, list) or not data:
        raise ConfigError("script must be a non-empty JSON array")
    entries: list[ScriptEntry] = []
    for item in data:
        if isinstance(item, str):
            entries.append(ScriptEntry(reply=item))
        elif isinstance(item, dict) and isinstance(item.get("reply"), str):
            contains = item.get("contains")
            if contains is not None and not isinstance(contains, str):
                raise ConfigError("script entry contains must be a string or null")
            entries.append(ScriptEntry(reply=item["reply"], contains=contains))
        else:
            raise ConfigError("script entries must be strings or {reply, contains?} objects")
    return ScriptedModel(entries=entries)


def build_model(config: Config):
    """Model handle from config: an HTTP gateway, or scripted playback
    when the endpoint uses the scripted:<path> scheme."""
    endpoint = config.model.endpoint
    if endpoint.startswith(SCRIPTED_SCHEME):
        return load_scripted(endpoint[len(SCRIPTED_SCHEME):])
    params = ChatParams(
        model_name=config.model.name,
        temperature=config.model.temperature,
        max_tokens=config.model.max_tokens,
        timeout=config.model.timeout,
        max_retries=config.model.max_retries,
    )
    return ChatGateway(endpoint, params, api_key=os.environ.get("OPENLOOP_API_KEY", ""))


@dataclass
class FeedbackItem:
    text: str
    submitted_at: str
    consumed_in_run: str | None = None


class Mailbox:
    """Durable FIFO of user feedback awaiting delivery.

    Submissions and deliveries are both appended to one JSONL journal,
    so a restart replays the journal and redelivers only what no run
    has consumed. The take marker is written before the items are used,
    which keeps delivery at most once even across a crash.
    """

    def __init__(self, path: Path | str):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._pending: deque[FeedbackItem] = deque()
        self._replay()

    def _replay(self) -> None:
        if not self.path.exists():
            return
        for line in self.path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            try:
                op = json.loads(line)
                if op["op"] == "put":
                    self._pending.append(FeedbackItem(str(op["text"]), str(op["ts"])))
                elif op["op"] == "take":
                    for _ in range(int(op["count"])):
                        if self._pending:
                            self._pending.popleft()
            except (ValueError, KeyError, TypeError):
                continue

    def _append(self, op: dict) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(op, ensure_ascii=False) + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def put(self, text: str) -> FeedbackItem:
        item = FeedbackItem(text=text, submitted_at=now_ts())
        with self._lock:
            self._append({"op": "put", "text": item.text, "ts": item.submitted_at})
            self._pending.append(item)
        return item

    def take_all(self, run_id: str) -> list[FeedbackItem]:
        """Claim every pending item for the given run, oldest first."""
        with self._lock:
            if not self._pending:
                return []
            items = list(self._pending)
            self._append({"op": "take", "count": len(items), "run_id": run_id, "ts": now_ts()})
            self._pending.clear()
        for item in items:
            item.consumed_in_run = run_id
        return items

    def pending_count(self) -> int:
        with self._lock:
            return len(self._pending)


@dataclass
class RunReport:
    index: int
    run_id: str
    status: str
    task_text: str | None = None
    origin: str | None = None
    duplicate_of: str | None = None
    steps_used: int = 0
    error: str | None = None


@dataclass(frozen=True)
class ExitSummary:
    runs_attempted: int
    runs_completed: int
    errors: int

    def as_dict(self) -> dict:
        return {
            "runs_attempted": self.runs_attempted,
            "runs_completed": self.runs_completed,
            "errors": self.errors,
        }


def render_preview(config: Config) -> str:
    """The system prompt the next run would start from, rendered
    without touching the network or creating any file (dry-run)."""
    template = (
        load_template(config.prompts.template_path)
        if config.prompts.template_path
        else load_default_template()
    )
    records, _ = load_records(config.memory.path)
    bindings = {
        "tools": tool_schema_text(),
        "memory_digest": digest(records, config.memory.max_entries, config.memory.char_budget),
        "curiosity_clause": CURIOSITY_CLAUSE,
        "workspace_listing": workspace_listing(config.workspace_root),
    }
    return render_system_prompt(template, bindings)


def workspace_listing(root: Path | str, cap: int = WORKSPACE_LISTING_CAP) -> str:
    root = Path(root)
    if not root.is_dir():
        return "(empty)"
    entries = list_files(resolve_jailed(root, "."))
    if not entries:
        return "(empty)"
    text = render_listing(entries)
    if len(text) > cap:
        text = text[:cap] + "\n..."
    return text


class Orchestrator:
    def __init__(
        self,
        config: Config,
        model=None,
        bus: EventBus | None = None,
        input_provider: Callable[[int], str | None] | None = None,
    ):
        self.config = config
        self.model = model if model is not None else build_model(config)
        self.bus = bus if bus is not None else EventBus()
        Path(config.workspace_root).mkdir(parents=True, exist_ok=True)
        self.store = MemoryStore(config.memory.path)
        self.mailbox = Mailbox(Path(config.memory.path).parent / "mailbox.jsonl")
        self.toolbelt = Toolbelt(
            root=config.workspace_root,
            cap=config.loop.observation_cap,
            subprocess_enabled=config.executor.mode == "subprocess",
            command_template=config.executor.command_template or None,
            timeout=config.executor.timeout,
        )
        prompts = config.prompts
        self.template = (
            load_template(prompts.template_path)
            if prompts.template_path
            else load_default_template()
        )
        self.nudges = (
            load_nudges(prompts.nudges_path) if prompts.nudges_path else dict(DEFAULT_NUDGES)
        )
        self.input_provider = input_provider if input_provider is not None else self._next_query
        self._queries: deque[str] = deque(config.queries)
        self.reports: list[RunReport] = []
        self.current_run_id: str | None = None
        self._control = threading.Condition()
        self._state = STATE_PAUSED if config.loop.start_paused else STATE_RUNNING
        self._step_budget = 0

    # ---- control surface -------------------------------------------------

    @property
    def state(self) -> str:
        with self._control:
            return self._state

    def control(self, command: str) -> str:
        """Apply a control command; returns the resulting state."""
        if command not in CONTROL_COMMANDS:
            raise ValueError(f"unknown control command {command!r}")
        with self._control:
            if self._state == STATE_STOPPED and command != "stop":
                raise ValueError("loop already stopped")
            if command == "pause":
                self._state = STATE_PAUSED
            elif command == "resume":
                self._state = STATE_RUNNING
                self._step_budget = 0
            elif command == "step":
                # One run, then remain paused.
                self._state = STATE_PAUSED
                self._step_budget += 1
            elif command == "stop":
                self._state = STATE_STOPPED
            state = self._state
            self._control.notify_all()
        self.bus.emit("state_changed", payload={"state": state, "command": command})
        return state

    def submit_feedback(self, text: str) -> FeedbackItem:
        """Queue guidance for the next run; persists across restarts.

        The memory record (when store_feedback is on) is written by the
        loop at delivery time, keeping the memory file single-writer.
        """
        text = text.strip()
        if not text:
            raise ValueError("feedback must be non-empty")
        item = self.mailbox.put(text)
        self.bus.emit("feedback_received", payload={"text": text})
        return item

    def status(self) -> dict:
        return {
            "state": self.state,
            "current_run_id": self.current_run_id,
            "runs_attempted": len(self.reports),
            "pending_feedback": self.mailbox.pending_count(),
            "memory_records": len(self.store.records),
        }

    def _gate(self) -> bool:
        """Block at a run boundary until the loop may proceed.

        False means the loop was stopped.
        """
        with self._control:
            announced = False
            while True:
                if self._state == STATE_STOPPED:
                    return False
                if self._state == STATE_RUNNING:
                    return True
                if self._step_budget > 0:
                    self._step_budget -= 1
                    return True
                if not announced:
                    announced = True
                    self.bus.emit("awaiting_input", payload={"state": self._state})
                self._control.wait()

    # ---- run lifecycle ---------------------------------------------------

    def _next_query(self, index: int) -> str | None:
        if self._queries:
            return self._queries.popleft()
        return None

    def _emit_message(self, message) -> None:
        kind = "observation" if message.role == "tool" else "message_appended"
        self.bus.emit(kind, run_id=self.current_run_id, payload={"message": message.to_dict()})

    def _system_bindings(self) -> dict[str, str]:
        mem = self.config.memory
        return {
            "tools": tool_schema_text(),
            "memory_digest": self.store.digest(mem.max_entries, mem.char_budget),
            "curiosity_clause": CURIOSITY_CLAUSE,
            "workspace_listing": workspace_listing(self.config.workspace_root),
        }

    def _write_transcript(self, transcript: Transcript) -> None:
        runs_dir = Path(self.config.runs_dir)
        runs_dir.mkdir(parents=True, exist_ok=True)
        path = runs_dir / f"{transcript.run_id}.jsonl"
        lines = [json.dumps(m.to_dict(), ensure_ascii=False) for m in transcript.messages]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    def run_once(self, index: int, user_input: str | None = None) -> RunReport:
        """Execute one complete run; model and storage faults become an
        error report instead of propagating."""
        loop_cfg = self.config.loop
        run_id = make_run_id(index)
        self.current_run_id = run_id
        report = RunReport(index=index, run_id=run_id, status="error")
        transcript = Transcript(run_id=run_id, observer=self._emit_message)
        self.bus.emit("run_started", run_id=run_id, payload={"index": index})
        try:
            system_text = render_system_prompt(self.template, self._system_bindings())
            transcript.append("system", system_text)
            for item in self.mailbox.take_all(run_id):
                if self.config.memory.store_feedback:
                    self.store.append_record(feedback_record(run_id, item.text))
                transcript.append("user", item.text, step_tag="feedback")

            spec = generate_task(
                transcript, user_input, self.model, self.nudges, loop_cfg.char_budget
            )
            if loop_cfg.duplicate_policy != "allow":
                regenerate = None
                if loop_cfg.duplicate_policy == "regenerate_once":
                    def regenerate(prior_task: str) -> TaskSpec:
                        transcript.append("system", duplicate_notice(prior_task), step_tag="nudge")
                        return generate_task(
                            transcript,
                            user_input,
                            self.model,
                            self.nudges,
                            loop_cfg.char_budget,
                            append_input=False,
                        )
                spec = apply_duplicate_policy(
                    spec,
                    self.store.records,
                    loop_cfg.duplicate_policy,
                    loop_cfg.dedup_threshold,
                    regenerate,
                )
            report.task_text = spec.text
            report.origin = spec.origin
            report.duplicate_of = spec.duplicate_of
            self.bus.emit(
                "task_generated",
                run_id=run_id,
                payload={
                    "task": spec.text,
                    "origin": spec.origin,
                    "duplicate_of": spec.duplicate_of,
                },
            )

            result = run_episode(
                transcript,
                spec,
                self.model,
                self.toolbelt,
                loop_cfg.max_steps,
                self.nudges,
                loop_cfg.char_budget,
                mode=self.config.executor.mode,
            )
            report.status = result.status
            report.steps_used = result.steps_used
            if result.status == STATUS_ABORTED and result.fault is not None:
                report.error = result.fault
            artifacts = tuple(self.toolbelt.take_written())
            record = summarize_run(
                transcript,
                spec,
                result,
                self.model,
                artifacts,
                self.nudges,
                loop_cfg.char_budget,
            )
            result.record = record
            self.store.append_record(record)
            self._write_transcript(transcript)
            self.bus.emit(
                "run_completed",
                run_id=run_id,
                payload={
                    "status": result.status,
                    "steps_used": result.steps_used,
                    "record": json.loads(record.to_line()),
                },
            )
        except OpenLoopError as exc:
            report.status = "error"
            report.error = f"{type(exc).__name__}: {exc}"
            # Keep whatever transcript exists for inspection.
            try:
                self._write_transcript(transcript)
            except OSError:
                pass
            self.bus.emit("error", run_id=run_id, payload={"error": report.error})
        finally:
            self.reports.append(report)
            self.current_run_id = None
        return report

    def _run_limit(self, override: int | None) -> int | None:
        """None means unbounded (stopped only by a control command)."""
        if override is not None:
            return override
        if self.config.loop.max_runs is not None:
            return self.config.loop.max_runs
        if self._queries and self.input_provider == self._next_query:
            # Batch mode: the query list bounds the loop.
            return len(self._queries)
        return None

    def run_loop(self, runs: int | None = None) -> ExitSummary:
        """Run until the limit, a stop command, or end of interactive
        input. Run ids continue from the highest one already in memory."""
        limit = self._run_limit(runs)
        index = self.store.next_run_index()
        attempted = completed = errors = 0
        while limit is None or attempted < limit:
            if not self._gate():
                break
            try:
                user_input = self.input_provider(index)
            except EOFError:
                break
            report = self.run_once(index, user_input)
            index += 1
            attempted += 1
            if report.error is None:
                completed += 1
            else:
                errors += 1
        summary = ExitSummary(attempted, completed, errors)
        self.bus.emit("loop_finished", payload=summary.as_dict())
        return summary
