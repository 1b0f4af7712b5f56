"""The plan-act-observe episode loop and the run summarizer.

Each step asks the model for either an action or a final answer,
executes actions against the jailed toolbelt, and feeds the
observation back. In toolcalls mode the action is a structured
program; in subprocess mode the fenced block is source code run by the
configured interpreter. Afterwards the run is condensed into a single
(task, action, outcome) record for long-term memory.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import GatewayError, MalformedAction, NoActionOrFinal, RecordError
from .goals import TaskSpec
from .memory import RunRecord, Transcript, now_ts
from .promptkit import (
    DEFAULT_CHAR_BUDGET,
    FinalAnswer,
    extract_action,
    extract_record,
    extract_source,
    insert_nudge,
    render_prompt,
)
from .toolbelt import ActionProgram, Observation, Toolbelt

DEFAULT_MAX_STEPS = 8
LOOP_WINDOW = 3
LOOP_WARNING = (
    "You are repeating the same action. Try a different approach, "
    "or finish with a <final> answer."
)

STATUS_FINAL_ANSWER = "final_answer"
STATUS_STEP_LIMIT = "step_limit"
STATUS_ABORTED = "aborted"

MODE_TOOLCALLS = "toolcalls"
MODE_SUBPROCESS = "subprocess"

ACTION_SUMMARY_CAP = 200
OUTCOME_CAP = 280


@dataclass
class EpisodeResult:
    status: str
    steps_used: int
    final_text: str | None = None
    executed_tools: tuple[str, ...] = ()
    last_observation: str | None = None
    fault: str | None = None
    record: RunRecord | None = None


def loop_detector(transcript: Transcript, window: int = LOOP_WINDOW) -> str | None:
    """Warning text when the last `window` actions are identical.

    Actions are compared by tool names and args (binds ignored); in
    subprocess mode by source text. Fewer than `window` actions so far,
    or any difference within the window, yields None.
    """
    signatures: list[str] = []
    for message in transcript.messages:
        if message.role != "assistant" or message.step_tag != "act":
            continue
        try:
            action = extract_action(message.content)
        except MalformedAction:
            try:
                source = extract_source(message.content)
            except (MalformedAction, NoActionOrFinal):
                continue
            if isinstance(source, str):
                signatures.append("src:" + source)
            continue
        except NoActionOrFinal:
            continue
        if isinstance(action, ActionProgram):
            signatures.append(action.signature())
    if len(signatures) < window:
        return None
    tail = signatures[-window:]
    if len(set(tail)) == 1:
        return LOOP_WARNING
    return None


def render_observation(observation: Observation) -> str:
    text = observation.body
    if observation.error is not None:
        text = f"{text}\nerror: {observation.error}" if text else f"error: {observation.error}"
    return text


def _parse_act_reply(content: str, mode: str):
    """FinalAnswer, ActionProgram (toolcalls), or source text (subprocess)."""
    if mode == MODE_SUBPROCESS:
        return extract_source(content)
    return extract_action(content)


def run_episode(
    transcript: Transcript,
    task: TaskSpec,
    model,
    toolbelt: Toolbelt,
    max_steps: int = DEFAULT_MAX_STEPS,
    nudges: dict[str, str] | None = None,
    char_budget: int = DEFAULT_CHAR_BUDGET,
    mode: str = MODE_TOOLCALLS,
) -> EpisodeResult:
    """Drive the model against the toolbelt until it answers or runs out
    of steps. Gateway faults abort the episode instead of raising."""
    if mode not in (MODE_TOOLCALLS, MODE_SUBPROCESS):
        raise ValueError(f"unknown executor mode {mode!r}")
    executed: list[str] = []
    last_obs: str | None = None
    warned = False
    for step in range(1, max_steps + 1):
        insert_nudge(transcript, "act", nudges)
        try:
            reply = model.complete(render_prompt(transcript, char_budget))
        except GatewayError as exc:
            return EpisodeResult(
                status=STATUS_ABORTED,
                steps_used=step - 1,
                executed_tools=tuple(executed),
                last_observation=last_obs,
                fault=f"{type(exc).__name__}: {exc}",
            )
        transcript.append("assistant", reply.content, step_tag="act")
        try:
            action = _parse_act_reply(reply.content, mode)
        except (MalformedAction, NoActionOrFinal) as exc:
            # Parse faults consume the step; the error goes back as the
            # observation so the model can correct itself.
            last_obs = f"{type(exc).__name__}: {exc}"
            transcript.append("tool", last_obs, step_tag="observe")
            continue
        if isinstance(action, FinalAnswer):
            return EpisodeResult(
                status=STATUS_FINAL_ANSWER,
                steps_used=step,
                final_text=action.text,
                executed_tools=tuple(executed),
                last_observation=last_obs,
            )
        if isinstance(action, ActionProgram):
            observation = toolbelt.execute(action)
            executed.extend(call.tool for call in action.calls)
        else:
            observation = toolbelt.execute_subprocess(action)
            executed.append("subprocess")
        last_obs = render_observation(observation)
        transcript.append("tool", last_obs, step_tag="observe")
        if not warned:
            warning = loop_detector(transcript, LOOP_WINDOW)
            if warning is not None:
                warned = True
                transcript.append("system", warning, step_tag="nudge")
    return EpisodeResult(
        status=STATUS_STEP_LIMIT,
        steps_used=max_steps,
        executed_tools=tuple(executed),
        last_observation=last_obs,
    )


def fallback_record(
    run_id: str,
    task: TaskSpec,
    result: EpisodeResult,
    artifacts: tuple[str, ...],
    ts: str | None = None,
) -> RunRecord:
    """Deterministic record used when the model cannot produce one."""
    action_summary = ", ".join(result.executed_tools)[:ACTION_SUMMARY_CAP]
    if result.final_text is not None:
        outcome = result.final_text
    elif result.last_observation is not None:
        outcome = f"{result.status}: {result.last_observation}"
    else:
        outcome = result.status
    return RunRecord(
        run_id=run_id,
        kind="run",
        task=task.text,
        action_summary=action_summary,
        outcome=outcome[:OUTCOME_CAP],
        artifacts=artifacts,
        ts=ts if ts is not None else now_ts(),
    )


def summarize_run(
    transcript: Transcript,
    task: TaskSpec,
    result: EpisodeResult,
    model,
    artifacts: tuple[str, ...],
    nudges: dict[str, str] | None = None,
    char_budget: int = DEFAULT_CHAR_BUDGET,
    ts: str | None = None,
) -> RunRecord:
    """Ask the model for the run's record; fall back to a mechanical one
    on any gateway or parse fault. Aborted episodes skip the model call."""
    if result.status == STATUS_ABORTED:
        return fallback_record(transcript.run_id, task, result, artifacts, ts)
    insert_nudge(transcript, "summary", nudges)
    try:
        reply = model.complete(render_prompt(transcript, char_budget))
        transcript.append("assistant", reply.content, step_tag="summary")
        task_text, action_summary, outcome = extract_record(reply.content)
    except (RecordError, GatewayError):
        return fallback_record(transcript.run_id, task, result, artifacts, ts)
    return RunRecord(
        run_id=transcript.run_id,
        kind="run",
        task=task_text or task.text,
        action_summary=action_summary[:ACTION_SUMMARY_CAP],
        outcome=outcome[:OUTCOME_CAP],
        artifacts=artifacts,
        ts=ts if ts is not None else now_ts(),
    )
