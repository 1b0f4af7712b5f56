"""Short-term and long-term memory.

Short-term memory is the per-run transcript buffer, reset at every run
boundary. Long-term memory is an append-only JSONL file of
(task, action, outcome) records that survives across runs; its digest
is what conditions the next run's task generation.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

from .errors import StorageError
from .promptkit import Message, ROLES, STEP_TAGS

DEFAULT_DIGEST_ENTRIES = 20
DEFAULT_DIGEST_BUDGET = 4000
EMPTY_DIGEST = "(no prior runs)"

_RUN_ID = re.compile(r"^r(\d+)-")


def make_run_id(index: int) -> str:
    """Sortable run identifier, e.g. ``r0001-356a``.

    The suffix is a hash of the index rather than a random draw so that
    identical batch runs produce identical memory files.
    """
    suffix = hashlib.sha1(f"openloop:{index}".encode()).hexdigest()[:4]
    return f"r{index:04d}-{suffix}"


def run_id_index(run_id: str) -> int | None:
    match = _RUN_ID.match(run_id)
    return int(match.group(1)) if match else None


@dataclass
class Transcript:
    """Ordered message buffer for one run; seq is strictly increasing."""

    run_id: str
    messages: list[Message] = field(default_factory=list)
    created_at: float = field(default_factory=time.time)
    observer: Callable[[Message], None] | None = None
    _next_seq: int = 0

    def append(self, role: str, content: str, step_tag: str | None = None) -> Message:
        if role not in ROLES:
            raise ValueError(f"unknown role {role!r}")
        if step_tag is not None and step_tag not in STEP_TAGS:
            raise ValueError(f"unknown step_tag {step_tag!r}")
        if role == "tool" and step_tag != "observe":
            raise ValueError("role=tool is reserved for executor observations")
        message = Message(role=role, content=content, step_tag=step_tag, seq=self._next_seq)
        self._next_seq += 1
        self.messages.append(message)
        if self.observer is not None:
            self.observer(message)
        return message


def reset_transcript(old: Transcript, run_id: str | None = None) -> Transcript:
    """Fresh, empty transcript with a new run id.

    Persisting the old transcript to its run log is the caller's duty
    and must happen before the old buffer is dropped.
    """
    if run_id is None:
        index = run_id_index(old.run_id)
        if index is not None:
            run_id = make_run_id(index + 1)
        else:
            digest = hashlib.sha1(old.run_id.encode()).hexdigest()[:4]
            run_id = f"{old.run_id}-{digest}"
    return Transcript(run_id=run_id, observer=old.observer)


def _validate_artifact(path: str) -> bool:
    if not path or path.startswith("/") or path.startswith("\\") or "\0" in path:
        return False
    return ".." not in path.replace("\\", "/").split("/")


@dataclass(frozen=True)
class RunRecord:
    """The persisted (task, action, outcome) tuple; one line on disk.

    ``kind='feedback'`` records carry the user's feedback text in
    ``outcome`` and an empty task.
    """

    run_id: str
    kind: str
    task: str
    action_summary: str
    outcome: str
    artifacts: tuple[str, ...] = ()
    ts: str = ""

    def __post_init__(self):
        if self.kind not in ("run", "feedback"):
            raise ValueError(f"unknown record kind {self.kind!r}")
        if self.kind == "run" and not self.task:
            raise ValueError("run records require a non-empty task")
        for artifact in self.artifacts:
            if not _validate_artifact(artifact):
                raise ValueError(f"artifact path not jail-relative: {artifact!r}")

    def to_line(self) -> str:
        return json.dumps(
            {
                "run_id": self.run_id,
                "kind": self.kind,
                "task": self.task,
                "action": self.action_summary,
                "outcome": self.outcome,
                "artifacts": list(self.artifacts),
                "ts": self.ts,
            },
            ensure_ascii=False,
        )

    @classmethod
    def from_line(cls, line: str) -> "RunRecord":
        data = json.loads(line)
        return cls(
            run_id=str(data["run_id"]),
            kind=str(data["kind"]),
            task=str(data["task"]),
            action_summary=str(data["action"]),
            outcome=str(data["outcome"]),
            artifacts=tuple(str(a) for a in data.get("artifacts", [])),
            ts=str(data.get("ts", "")),
        )


def now_ts() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()) + "Z"


def load_records(path: Path | str) -> tuple[list[RunRecord], int]:
    """Read all well-formed records from a JSONL file.

    Malformed lines (including a partially written final line from a
    crash mid-append) are skipped and counted, never fatal. A missing
    file is an empty store.
    """
    p = Path(path)
    if not p.exists():
        return [], 0
    records: list[RunRecord] = []
    skipped = 0
    for line in p.read_text("utf-8").splitlines():
        if not line.strip():
            continue
        try:
            records.append(RunRecord.from_line(line))
        except (ValueError, KeyError, TypeError):
            skipped += 1
    return records, skipped


class MemoryStore:
    """Append-only record store over one JSONL file.

    Appends are lock-protected so the feedback path may write from the
    service thread while the loop writes run records; existing lines
    are never rewritten.
    """

    def __init__(self, path: Path | str):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._records, self.skipped = load_records(self.path)

    @property
    def records(self) -> tuple[RunRecord, ...]:
        """Snapshot safe to read concurrently with appends."""
        with self._lock:
            return tuple(self._records)

    def next_run_index(self) -> int:
        indices = [run_id_index(r.run_id) for r in self.records]
        known = [i for i in indices if i is not None]
        return max(known, default=0) + 1

    def append_record(self, record: RunRecord) -> None:
        """Write exactly one line at the end of the file, durably."""
        with self._lock:
            try:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(record.to_line() + "\n")
                    fh.flush()
                    os.fsync(fh.fileno())
            except OSError as exc:
                raise StorageError(f"{self.path}: {exc.strerror or exc}") from exc
            self._records.append(record)

    def digest(
        self,
        max_entries: int = DEFAULT_DIGEST_ENTRIES,
        char_budget: int = DEFAULT_DIGEST_BUDGET,
    ) -> str:
        return digest(self.records, max_entries, char_budget)


def digest(
    records,
    max_entries: int = DEFAULT_DIGEST_ENTRIES,
    char_budget: int = DEFAULT_DIGEST_BUDGET,
) -> str:
    """Bounded rendering of the most recent records, newest last.

    This text is what task generation sees of long-term memory; its
    length never exceeds ``char_budget``.
    """
    records = list(records)
    if not records:
        return EMPTY_DIGEST[:char_budget]
    recent = records[-max_entries:]
    cap = max(16, char_budget // (2 * len(recent)))
    lines = [
        f"- [{r.kind}] task={r.task[:cap]} outcome={r.outcome[:cap]}"
        for r in recent
    ]
    while lines and sum(len(l) for l in lines) + len(lines) - 1 > char_budget:
        if len(lines) == 1:
            return lines[0][:char_budget]
        lines.pop(0)
    return "\n".join(lines)


def feedback_record(run_id: str, text: str, ts: str | None = None) -> RunRecord:
    return RunRecord(
        run_id=run_id,
        kind="feedback",
        task="",
        action_summary="",
        outcome=text,
        ts=ts if ts is not None else now_ts(),
    )


def with_ts(record: RunRecord, ts: str) -> RunRecord:
    return replace(record, ts=ts)
