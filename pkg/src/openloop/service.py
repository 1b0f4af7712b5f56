"""HTTP facade over a running orchestrator.

JSON endpoints expose runs, memory, status, feedback, and control; a
server-sent-events stream at /api/events carries the live event log
with resumable sequence ids. Optionally serves a static UI directory.
Stdlib http.server keeps the service dependency-free and easy to run
inside tests.
"""

from __future__ import annotations

import json
import mimetypes
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

from .errors import BindError
from .events import Event
from .orchestrator import Orchestrator

SSE_POLL_SECONDS = 0.5


def format_sse(event: Event) -> str:
    """One SSE frame: id is the sequence number, event is the kind."""
    data = event.as_json()
    return f"id: {event.seq}\nevent: {event.kind}\ndata: {data}\n\n"


def _resume_seq(handler: BaseHTTPRequestHandler, query: dict) -> int:
    raw = handler.headers.get("Last-Event-ID")
    if raw is None and "since" in query:
        raw = query["since"][0]
    try:
        return max(0, int(raw)) if raw is not None else 0
    except ValueError:
        return 0


class Service:
    """Owns the HTTP server; the orchestrator loop runs elsewhere."""

    def __init__(
        self,
        orchestrator: Orchestrator,
        host: str = "127.0.0.1",
        port: int = 8080,
        static_dir: str | None = None,
    ):
        self.orchestrator = orchestrator
        self.static_dir = Path(static_dir).resolve() if static_dir else None
        handler = _make_handler(orchestrator, self.static_dir)
        try:
            self.httpd = ThreadingHTTPServer((host, port), handler)
        except OSError as exc:
            raise BindError(f"cannot bind {host}:{port}: {exc}") from None
        self.httpd.daemon_threads = True
        self.host, self.port = self.httpd.server_address[:2]
        self._thread: threading.Thread | None = None

    @property
    def url(self) -> str:
        return f"http://{self.host}:{self.port}"

    def start(self) -> None:
        self._thread = threading.Thread(
            target=self.httpd.serve_forever, kwargs={"poll_interval": 0.1}, daemon=True
        )
        self._thread.start()

    def shutdown(self) -> None:
        """Stop accepting requests and release SSE streams."""
        self.orchestrator.bus.close()
        self.httpd.shutdown()
        self.httpd.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)


def _make_handler(orchestrator: Orchestrator, static_dir: Path | None):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"
        server_version = "openloop"

        def log_message(self, format: str, *args) -> None:
            pass

        def _cors(self) -> None:
            self.send_header("Access-Control-Allow-Origin", "*")
            self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
            self.send_header("Access-Control-Allow-Headers", "Content-Type, Last-Event-ID")

        def _send_json(self, status: int, obj) -> None:
            body = json.dumps(obj, ensure_ascii=False).encode("utf-8")
            self.send_response(status)
            self._cors()
            self.send_header("Content-Type", "application/json; charset=utf-8")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def _read_json_body(self):
            try:
                length = int(self.headers.get("Content-Length", "0"))
            except ValueError:
                length = 0
            raw = self.rfile.read(length) if length else b""
            if not raw:
                return None
            try:
                return json.loads(raw.decode("utf-8"))
            except (ValueError, UnicodeDecodeError):
                return None

        def do_OPTIONS(self) -> None:
            self.send_response(204)
            self._cors()
            self.send_header("Content-Length", "0")
            self.end_headers()

        def do_GET(self) -> None:
            parsed = urlparse(self.path)
            parts = [p for p in parsed.path.split("/") if p]
            if parts[:1] == ["api"]:
                self._api_get(parts[1:], parse_qs(parsed.query))
            else:
                self._static(parsed.path)

        def do_POST(self) -> None:
            parsed = urlparse(self.path)
            parts = [p for p in parsed.path.split("/") if p]
            if parts == ["api", "feedback"]:
                self._post_feedback()
            elif parts == ["api", "control"]:
                self._post_control()
            else:
                self._send_json(404, {"error": "not found"})

        # ---- API routes ---------------------------------------------------

        def _api_get(self, parts: list[str], query: dict) -> None:
            if parts == ["status"]:
                self._send_json(200, orchestrator.status())
            elif parts == ["runs"]:
                records = [
                    json.loads(r.to_line())
                    for r in orchestrator.store.records
                    if r.kind == "run"
                ]
                records.reverse()
                self._send_json(200, records)
            elif len(parts) == 2 and parts[0] == "runs":
                self._get_run(parts[1])
            elif parts == ["memory"]:
                records = [json.loads(r.to_line()) for r in orchestrator.store.records]
                records.reverse()
                self._send_json(200, records)
            elif parts == ["events"]:
                self._stream_events(query)
            else:
                self._send_json(404, {"error": "not found"})

        def _get_run(self, run_id: str) -> None:
            if "/" in run_id or "\\" in run_id or ".." in run_id:
                self._send_json(400, {"error": "bad run id"})
                return
            path = Path(orchestrator.config.runs_dir) / f"{run_id}.jsonl"
            if not path.is_file():
                self._send_json(404, {"error": f"no transcript for {run_id}"})
                return
            messages = []
            for line in path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    messages.append(json.loads(line))
            self._send_json(200, messages)

        def _post_feedback(self) -> None:
            body = self._read_json_body()
            text = body.get("text") if isinstance(body, dict) else None
            if not isinstance(text, str) or not text.strip():
                self._send_json(400, {"error": "text must be a non-empty string"})
                return
            orchestrator.submit_feedback(text)
            self._send_json(
                202, {"ok": True, "pending": orchestrator.mailbox.pending_count()}
            )

        def _post_control(self) -> None:
            body = self._read_json_body()
            command = body.get("command") if isinstance(body, dict) else None
            if not isinstance(command, str):
                self._send_json(400, {"error": "command must be a string"})
                return
            try:
                state = orchestrator.control(command)
            except ValueError as exc:
                self._send_json(400, {"error": str(exc)})
                return
            self._send_json(200, {"state": state})

        def _write_chunk(self, data: bytes) -> None:
            self.wfile.write(f"{len(data):X}\r\n".encode("ascii") + data + b"\r\n")
            self.wfile.flush()

        def _stream_events(self, query: dict) -> None:
            # Chunked framing so clients see each frame the moment it is
            # written instead of waiting to fill a read buffer.
            self.close_connection = True
            last = _resume_seq(self, query)
            self.send_response(200)
            self._cors()
            self.send_header("Content-Type", "text/event-stream; charset=utf-8")
            self.send_header("Cache-Control", "no-cache")
            self.send_header("Transfer-Encoding", "chunked")
            self.end_headers()
            bus = orchestrator.bus
            try:
                while True:
                    batch = bus.wait_since(last, timeout=SSE_POLL_SECONDS)
                    fresh = [e for e in batch if e.seq > last]
                    if fresh:
                        for event in fresh:
                            self._write_chunk(format_sse(event).encode("utf-8"))
                            last = event.seq
                    else:
                        # Heartbeat comment; also surfaces dead sockets.
                        self._write_chunk(b": ping\n\n")
                    if bus.closed and not fresh:
                        self.wfile.write(b"0\r\n\r\n")
                        self.wfile.flush()
                        return
            except (BrokenPipeError, ConnectionResetError):
                return

        # ---- static UI ----------------------------------------------------

        def _static(self, path: str) -> None:
            if static_dir is None:
                self._send_json(404, {"error": "no static directory configured"})
                return
            rel = path.lstrip("/") or "index.html"
            target = (static_dir / rel).resolve()
            if not target.is_relative_to(static_dir) or not target.is_file():
                self._send_json(404, {"error": "not found"})
                return
            ctype = mimetypes.guess_type(target.name)[0] or "application/octet-stream"
            body = target.read_bytes()
            self.send_response(200)
            self._cors()
            self.send_header("Content-Type", ctype)
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

    return Handler
