"""In-process event stream for observers of a running loop.

Every noteworthy moment (run boundaries, appended messages, feedback,
control state changes) becomes an Event with a dense sequence number,
so a consumer that reconnects can resume exactly where it stopped.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from typing import Any

from .memory import now_ts

# Core kinds, plus three informational extensions (feedback_received,
# state_changed, loop_finished) consumed by the CLI tail and the UI.
EVENT_KINDS = (
    "run_started",
    "task_generated",
    "message_appended",
    "observation",
    "run_completed",
    "awaiting_input",
    "error",
    "feedback_received",
    "state_changed",
    "loop_finished",
)


@dataclass(frozen=True)
class Event:
    seq: int
    kind: str
    run_id: str | None
    payload: dict[str, Any]
    ts: str

    def as_dict(self) -> dict[str, Any]:
        return {
            "seq": self.seq,
            "kind": self.kind,
            "run_id": self.run_id,
            "payload": self.payload,
            "ts": self.ts,
        }

    def as_json(self) -> str:
        return json.dumps(self.as_dict(), ensure_ascii=False, sort_keys=True)


class EventBus:
    """Thread-safe append-only event log with blocking tail reads."""

    def __init__(self) -> None:
        self._cond = threading.Condition()
        self._events: list[Event] = []
        self._closed = False

    def emit(
        self, kind: str, run_id: str | None = None, payload: dict[str, Any] | None = None
    ) -> Event:
        if kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {kind!r}")
        with self._cond:
            event = Event(
                seq=len(self._events) + 1,
                kind=kind,
                run_id=run_id,
                payload=payload if payload is not None else {},
                ts=now_ts(),
            )
            self._events.append(event)
            self._cond.notify_all()
        return event

    @property
    def closed(self) -> bool:
        with self._cond:
            return self._closed

    def close(self) -> None:
        """Wake all waiters; subsequent wait_since calls return at once."""
        with self._cond:
            self._closed = True
            self._cond.notify_all()

    def snapshot(self, since_seq: int = 0) -> list[Event]:
        """Events with seq greater than since_seq, oldest first."""
        with self._cond:
            return self._events[since_seq:]

    def wait_since(self, since_seq: int, timeout: float | None = None) -> list[Event]:
        """Block until at least one event past since_seq exists, the bus
        closes, or the timeout lapses. Returns possibly-empty batch."""
        with self._cond:
            if not self._closed and len(self._events) <= since_seq:
                self._cond.wait(timeout)
            return self._events[since_seq:]
