"""Prompt construction and structured-output parsing.

Builds every prompt the model sees (system template, nudges, budgeted
transcript windows) and pulls every structured artifact back out of
model text: task tags, action fences, final answers, and run-summary
records. Parsers are pure; same bytes in, same result out.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources
from typing import TYPE_CHECKING

from .errors import (
    BudgetTooSmall,
    EmptyTask,
    MalformedAction,
    MalformedRecord,
    MissingBinding,
    MissingField,
    NoActionOrFinal,
    NoRecordBlock,
    NoTaskTag,
)
from .toolbelt import ActionProgram, ToolCall, validate_program

if TYPE_CHECKING:
    from .memory import Transcript

ROLES = frozenset({"system", "user", "assistant", "tool"})
STEP_TAGS = frozenset(
    {
        "user_input",
        "task_generation",
        "plan",
        "act",
        "observe",
        "summary",
        "nudge",
        "feedback",
    }
)

# Fixed instruction inserted via the {{curiosity_clause}} placeholder.
CURIOSITY_CLAUSE = (
    "Be curious: explore the environment, read, summarize, and understand "
    "its files, and write down your progress and tasks."
)

# Fixed nudge texts, one per steerable step. Shipped as prompts/nudges.txt
# and mirrored here as the fallback when no template override is loaded.
DEFAULT_NUDGES = {
    "task_generation": "Now generate the task, as described previously.",
    "act": "Now plan and act on the task, as described previously.",
    "summary": "Now summarize this run as a record, as described previously.",
}

DEFAULT_CHAR_BUDGET = 24000

_PLACEHOLDER = re.compile(r"\{\{(\w+)\}\}")
_TASK_CLOSE = "</task>"
_TASK_OPEN = "<task>"
_FINAL = re.compile(r"<final>(.*?)</final>", re.DOTALL)


@dataclass(frozen=True)
class Message:
    """One turn of conversation; the atom of short-term memory.

    ``step_tag`` is None only for the bootstrap system prompt, which
    predates the tagged loop steps.
    """

    role: str
    content: str
    step_tag: str | None
    seq: int

    def to_dict(self) -> dict:
        return {
            "role": self.role,
            "content": self.content,
            "step_tag": self.step_tag,
            "seq": self.seq,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Message":
        return cls(
            role=data["role"],
            content=data["content"],
            step_tag=data.get("step_tag"),
            seq=data["seq"],
        )


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    body: str

    def placeholders(self) -> list[str]:
        return [m.group(1) for m in _PLACEHOLDER.finditer(self.body)]


@dataclass(frozen=True)
class ParsedTask:
    text: str


@dataclass(frozen=True)
class FinalAnswer:
    text: str


def load_default_template(name: str = "system") -> PromptTemplate:
    body = resources.files("openloop").joinpath(f"prompts/{name}.txt").read_text("utf-8")
    return PromptTemplate(name=name, body=body)


def load_template(path) -> PromptTemplate:
    from pathlib import Path

    p = Path(path)
    return PromptTemplate(name=p.stem, body=p.read_text("utf-8"))


def load_nudges(path) -> dict[str, str]:
    """Parse a nudges file: one ``step: text`` entry per line."""
    from pathlib import Path

    nudges = {}
    for line in Path(path).read_text("utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        step, _, text = line.partition(":")
        nudges[step.strip()] = text.strip()
    missing = set(DEFAULT_NUDGES) - set(nudges)
    if missing:
        raise MissingBinding("nudges file lacks: " + ", ".join(sorted(missing)))
    return nudges


def render_system_prompt(template: PromptTemplate, bindings: dict[str, str]) -> str:
    """Substitute every ``{{placeholder}}`` in the template body.

    Output is byte-identical to the body apart from the substitutions.
    """
    def sub(match: re.Match) -> str:
        name = match.group(1)
        if name not in bindings:
            raise MissingBinding(name)
        return bindings[name]

    return _PLACEHOLDER.sub(sub, template.body)


def extract_task(reply: str) -> ParsedTask:
    """Content of the first well-formed ``<task>...</task>`` pair.

    Well-formed means an open tag precedes the close tag; the pair uses
    the last open tag before the earliest qualifying close tag, so the
    extracted text never contains a tag substring itself.
    """
    close = reply.find(_TASK_CLOSE)
    while close >= 0:
        open_at = reply.rfind(_TASK_OPEN, 0, close)
        if open_at >= 0:
            text = reply[open_at + len(_TASK_OPEN) : close].strip()
            if not text:
                raise EmptyTask("task tags present but empty")
            return ParsedTask(text=text)
        close = reply.find(_TASK_CLOSE, close + len(_TASK_CLOSE))
    raise NoTaskTag("no well-formed <task></task> pair in reply")


_ACTION_FENCE = re.compile(r"```action[ \t]*\n(.*?)```", re.DOTALL)
_RECORD_FENCE = re.compile(r"```record[ \t]*\n(.*?)```", re.DOTALL)


def extract_action(reply: str) -> ActionProgram | FinalAnswer:
    """Parse a reply into an ActionProgram or a FinalAnswer.

    An action fence wins over a final tag when both are present.
    Raises MalformedAction (fence present, body bad) or NoActionOrFinal.
    """
    fence = _ACTION_FENCE.search(reply)
    if fence is not None:
        return _parse_action_body(fence.group(1))
    final = _FINAL.search(reply)
    if final is not None:
        return FinalAnswer(text=final.group(1).strip())
    raise NoActionOrFinal("reply contains neither an action block nor a final answer")


def extract_source(reply: str) -> str | FinalAnswer:
    """Subprocess-mode parse: the raw action fence body as source text.

    A final tag still finishes the task; an empty fence is
    MalformedAction, and a reply with neither raises NoActionOrFinal.
    """
    fence = _ACTION_FENCE.search(reply)
    if fence is not None:
        source = fence.group(1)
        if not source.strip():
            raise MalformedAction("action block is empty")
        return source
    final = _FINAL.search(reply)
    if final is not None:
        return FinalAnswer(text=final.group(1).strip())
    raise NoActionOrFinal("reply contains neither an action block nor a final answer")


def _parse_action_body(body: str) -> ActionProgram:
    try:
        data = json.loads(body)
    except json.JSONDecodeError as exc:
        raise MalformedAction(
            f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}"
        ) from exc
    if not isinstance(data, list):
        raise MalformedAction("action body must be a JSON array of tool calls")
    calls: list[ToolCall] = []
    for i, item in enumerate(data, start=1):
        if not isinstance(item, dict):
            raise MalformedAction(f"call {i} is not an object")
        extra = set(item) - {"tool", "args", "bind"}
        if extra:
            raise MalformedAction(
                f"call {i}: unexpected keys: " + ", ".join(sorted(extra))
            )
        tool = item.get("tool")
        if not isinstance(tool, str):
            raise MalformedAction(f"call {i}: 'tool' must be a string")
        args = item.get("args", {})
        if not isinstance(args, dict):
            raise MalformedAction(f"call {i}: 'args' must be an object")
        bind = item.get("bind")
        if bind is not None and not isinstance(bind, str):
            raise MalformedAction(f"call {i}: 'bind' must be a string")
        calls.append(ToolCall(tool=tool, args=args, bind=bind))
    fault = validate_program(calls)
    if fault is not None:
        raise MalformedAction(fault)
    return ActionProgram(calls=tuple(calls))


def extract_record(reply: str) -> tuple[str, str, str]:
    """Parse the fenced ``record`` block into (task, action, outcome).

    All three keys are required. Raises NoRecordBlock, MalformedRecord,
    or MissingField; the caller falls back to a deterministic summary.
    """
    fence = _RECORD_FENCE.search(reply)
    if fence is None:
        raise NoRecordBlock("no record block in reply")
    try:
        data = json.loads(fence.group(1))
    except json.JSONDecodeError as exc:
        raise MalformedRecord(f"record body is not valid JSON: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise MalformedRecord("record body must be a JSON object")
    for key in ("task", "action", "outcome"):
        if key not in data:
            raise MissingField(key)
    return str(data["task"]), str(data["action"]), str(data["outcome"])


def insert_nudge(
    transcript: "Transcript", step: str, nudges: dict[str, str] | None = None
) -> Message:
    """Append the fixed system nudge for ``step`` and return it."""
    texts = nudges or DEFAULT_NUDGES
    if step not in texts:
        raise KeyError(f"no nudge defined for step {step!r}")
    return transcript.append("system", texts[step], step_tag="nudge")


def render_prompt(transcript: "Transcript", char_budget: int = DEFAULT_CHAR_BUDGET) -> list[Message]:
    """Select the messages sent to the model under a character budget.

    The transcript's leading run of system messages always survives and
    stays first; of the rest, the oldest are dropped until the suffix
    fits. Messages are never split. Budget is the sum of content lengths.
    """
    messages = transcript.messages
    if not messages or messages[0].role != "system":
        raise ValueError("transcript must start with a system message")
    head_len = 0
    while head_len < len(messages) and messages[head_len].role == "system":
        head_len += 1
    head = list(messages[:head_len])
    used = sum(len(m.content) for m in head)
    if used > char_budget:
        raise BudgetTooSmall(
            f"system prompt is {used} chars, budget is {char_budget}"
        )
    tail: list[Message] = []
    for message in reversed(messages[head_len:]):
        if used + len(message.content) > char_budget:
            break
        tail.append(message)
        used += len(message.content)
    tail.reverse()
    return head + tail
