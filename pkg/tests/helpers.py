"""Shared test utilities: protocol reply builders, model stubs, an
HTTP chat stub server, filesystem snapshots, and a config factory."""

from __future__ import annotations

import hashlib
import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from openloop.config import Config, from_dict
from openloop.errors import TransportError

# Never contacted; used when a test injects its own model object.
DUMMY_ENDPOINT = "http://127.0.0.1:9"


# ---- canonical protocol replies ----------------------------------------


def task_reply(text: str) -> str:
    return f"<task>{text}</task>"


def action_reply(*calls: dict) -> str:
    return "```action\n" + json.dumps(list(calls)) + "\n```"


def final_reply(text: str) -> str:
    return f"<final>{text}</final>"


def record_reply(task: str, action: str, outcome: str) -> str:
    body = json.dumps({"task": task, "action": action, "outcome": outcome})
    return "```record\n" + body + "\n```"


def write_call(path: str, content: str) -> dict:
    return {"tool": "write_file", "args": {"path": path, "content": content}}


def read_call(path: str, bind: str | None = None) -> dict:
    call: dict = {"tool": "read_file", "args": {"path": path}}
    if bind:
        call["bind"] = bind
    return call


def list_call(path: str = ".") -> dict:
    return {"tool": "list_files", "args": {"path": path}}


# ---- model stubs ---------------------------------------------------------


class RecordingModel:
    """Wraps a model and keeps a copy of every prompt sent to it."""

    def __init__(self, inner):
        self.inner = inner
        self.calls: list[list] = []

    def complete(self, messages):
        self.calls.append(list(messages))
        return self.inner.complete(messages)


class FailingModel:
    """Raises TransportError on the nth complete() call (1-based)."""

    def __init__(self, inner, fail_on_call: int):
        self.inner = inner
        self.fail_on_call = fail_on_call
        self.count = 0

    def complete(self, messages):
        self.count += 1
        if self.count == self.fail_on_call:
            raise TransportError("injected network fault")
        return self.inner.complete(messages)


def wait_until(predicate, timeout: float = 5.0) -> bool:
    """Poll until predicate() is true or the timeout lapses."""
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if predicate():
            return True
        time.sleep(0.01)
    return predicate()


# ---- filesystem snapshots ------------------------------------------------


def tree_snapshot(root: Path | str) -> dict[str, str]:
    """Map relpath -> sha1 (files) or "<dir>" for confinement diffs."""
    out: dict[str, str] = {}
    root = Path(root)
    if not root.exists():
        return out
    for p in sorted(root.rglob("*")):
        rel = p.relative_to(root).as_posix()
        if p.is_dir():
            out[rel] = "<dir>"
        elif p.is_file():
            out[rel] = hashlib.sha1(p.read_bytes()).hexdigest()
    return out


def changed_paths(before: dict[str, str], after: dict[str, str]) -> set[str]:
    keys = set(before) | set(after)
    return {k for k in keys if before.get(k) != after.get(k)}


# ---- config factory --------------------------------------------------------


def make_config(tmp_path: Path, *, replies=None, script=None, **sections) -> Config:
    """Config rooted at tmp_path with workspace ws/.

    ``replies`` builds a sequential script of plain strings; ``script``
    passes raw entries (strings or {"reply", "contains"} objects).
    Extra keyword sections merge into the config dict as-is.
    """
    data: dict = {"workspace_root": "ws"}
    if replies is not None:
        script = list(replies)
    if script is not None:
        sp = tmp_path / "script.json"
        sp.write_text(json.dumps(script), encoding="utf-8")
        data["model"] = {"endpoint": "scripted:script.json"}
    else:
        data["model"] = {"endpoint": DUMMY_ENDPOINT}
    data.update(sections)
    return from_dict(data, tmp_path)


# ---- HTTP chat stub ----------------------------------------------------


def reply_body(text: str) -> dict:
    return {"choices": [{"message": {"role": "assistant", "content": text}}]}


class ChatStub:
    """Minimal chat-completions endpoint with a scripted behavior queue.

    Behaviors are dicts consumed in order: {"status": int, "body": ...}
    replies with that status and JSON or raw body; {"drop": True}
    closes the connection unanswered. An empty queue replies 200 "ok".
    Request payloads and paths are captured for assertions.
    """

    def __init__(self):
        self.requests: list[dict] = []
        self.paths: list[str] = []
        self.headers: list[dict] = []
        self.behaviors: list[dict] = []
        self._lock = threading.Lock()
        stub = self

        class Handler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"

            def log_message(self, *args):
                pass

            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                raw = self.rfile.read(length)
                with stub._lock:
                    try:
                        stub.requests.append(json.loads(raw))
                    except json.JSONDecodeError:
                        stub.requests.append({"raw": raw.decode("utf-8", "replace")})
                    stub.paths.append(self.path)
                    stub.headers.append({k.lower(): v for k, v in self.headers.items()})
                    behavior = stub.behaviors.pop(0) if stub.behaviors else {}
                if behavior.get("drop"):
                    self.close_connection = True
                    self.connection.close()
                    return
                body = behavior.get("body", reply_body("ok"))
                payload = (
                    json.dumps(body) if isinstance(body, (dict, list)) else str(body)
                ).encode("utf-8")
                self.send_response(behavior.get("status", 200))
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)

        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.httpd.daemon_threads = True
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self.thread.start()

    @property
    def endpoint(self) -> str:
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}"

    def close(self):
        self.httpd.shutdown()
        self.httpd.server_close()
        self.thread.join(timeout=5)


__all__ = [
    "DUMMY_ENDPOINT",
    "ChatStub",
    "FailingModel",
    "RecordingModel",
    "action_reply",
    "changed_paths",
    "final_reply",
    "list_call",
    "make_config",
    "read_call",
    "record_reply",
    "reply_body",
    "task_reply",
    "tree_snapshot",
    "wait_until",
    "write_call",
]
