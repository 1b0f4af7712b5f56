"""Task generation and repetition detection.

Takes optional user input, conditions on the long-term memory digest
already rendered into the system prompt, and produces the run's task
via a model call. A normalized Jaccard check flags tasks the agent has
effectively done before.
"""

from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass, replace
from typing import Callable, Sequence

from .errors import EmptyTask, NoTaskTag, TaskGenerationFailed
from .memory import RunRecord, Transcript
from .promptkit import (
    DEFAULT_CHAR_BUDGET,
    extract_task,
    insert_nudge,
    render_prompt,
)

DEFAULT_DEDUP_THRESHOLD = 0.6

ORIGIN_USER_GIVEN = "user_given"
ORIGIN_SELF_GENERATED = "self_generated"
ORIGIN_USER_REFINED = "user_refined"

DUPLICATE_POLICIES = ("allow", "warn", "regenerate_once")


@dataclass(frozen=True)
class TaskSpec:
    text: str
    origin: str
    source_user_prompt: str | None = None
    duplicate_of: str | None = None


def generate_task(
    transcript: Transcript,
    user_input: str | None,
    model,
    nudges: dict[str, str] | None = None,
    char_budget: int = DEFAULT_CHAR_BUDGET,
    append_input: bool = True,
) -> TaskSpec:
    """Produce this run's TaskSpec through one model call (two at most).

    Appends the user input (if any) and the task-generation nudge, asks
    the model, and parses the ``<task>`` tags. An unparseable reply is
    re-nudged once; a second failure skips the run.
    """
    if user_input is not None and append_input:
        transcript.append("user", user_input, step_tag="user_input")
    last_fault: Exception | None = None
    for _ in range(2):
        insert_nudge(transcript, "task_generation", nudges)
        reply = model.complete(render_prompt(transcript, char_budget))
        transcript.append("assistant", reply.content, step_tag="task_generation")
        try:
            parsed = extract_task(reply.content)
        except (NoTaskTag, EmptyTask) as exc:
            last_fault = exc
            continue
        return _with_origin(parsed.text, user_input)
    raise TaskGenerationFailed(f"both attempts unparseable: {last_fault}")


def _with_origin(text: str, user_input: str | None) -> TaskSpec:
    if user_input is None:
        return TaskSpec(text=text, origin=ORIGIN_SELF_GENERATED)
    if text == user_input.strip():
        return TaskSpec(text=text, origin=ORIGIN_USER_GIVEN, source_user_prompt=user_input)
    return TaskSpec(text=text, origin=ORIGIN_USER_REFINED, source_user_prompt=user_input)


def normalize_task(text: str) -> str:
    """Lowercase, strip everything outside letters/digits/spaces, and
    collapse whitespace."""
    text = unicodedata.normalize("NFKC", text).lower()
    text = "".join(ch if ch.isalnum() or ch.isspace() else " " for ch in text)
    return re.sub(r"\s+", " ", text).strip()


def jaccard(a: str, b: str) -> float:
    """Token-set Jaccard similarity of two normalized task strings."""
    ta = set(normalize_task(a).split())
    tb = set(normalize_task(b).split())
    if not ta and not tb:
        return 1.0
    if not ta or not tb:
        return 0.0
    return len(ta & tb) / len(ta | tb)


def _find_duplicate(
    task: str, records: Sequence[RunRecord], threshold: float
) -> RunRecord | None:
    for record in reversed(list(records)):
        if record.kind != "run":
            continue
        if jaccard(task, record.task) >= threshold:
            return record
    return None


def dedup_check(
    task: str, records: Sequence[RunRecord], threshold: float = DEFAULT_DEDUP_THRESHOLD
) -> str | None:
    """Run id of the most recent record whose task is near-identical to
    the candidate, or None."""
    record = _find_duplicate(task, records, threshold)
    return record.run_id if record is not None else None


def apply_duplicate_policy(
    spec: TaskSpec,
    records: Sequence[RunRecord],
    policy: str,
    threshold: float = DEFAULT_DEDUP_THRESHOLD,
    regenerate: Callable[[str], TaskSpec] | None = None,
) -> TaskSpec:
    """Apply the configured reaction to a repeated task.

    allow: proceed untouched. warn: mark duplicate_of and proceed.
    regenerate_once: one extra generation attempt naming the duplicate;
    if the retry still repeats, proceed with duplicate_of set.
    """
    if policy not in DUPLICATE_POLICIES:
        raise ValueError(f"unknown duplicate policy {policy!r}")
    duplicate = _find_duplicate(spec.text, records, threshold)
    if duplicate is None or policy == "allow":
        return spec
    if policy == "warn" or regenerate is None:
        return replace(spec, duplicate_of=duplicate.run_id)
    retried = regenerate(duplicate.task)
    second = _find_duplicate(retried.text, records, threshold)
    if second is not None:
        return replace(retried, duplicate_of=second.run_id)
    return retried


def duplicate_notice(prior_task: str) -> str:
    """System message injected before a regenerate_once retry."""
    return f'You already did: "{prior_task}". Generate a different task.'
