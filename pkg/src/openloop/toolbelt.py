"""Jailed file tools and action-program execution.

The agent's only effectors. Every path is resolved against a workspace
root and anything that would land outside it is rejected. Tool failures
never raise out of ``execute``; they are rendered into the returned
Observation so the model sees them as text.
"""

from __future__ import annotations

import os
import re
import shlex
import subprocess
import time
from dataclasses import dataclass, field
from pathlib import Path

from .errors import (
    AbsolutePathRejected,
    InvalidPath,
    IoError,
    JailEscape,
    NotADirectory,
    NotAFile,
    NotFound,
    NotUtf8,
    ToolError,
)

DEFAULT_OBSERVATION_CAP = 16384
DEFAULT_SUBPROCESS_TIMEOUT = 30.0
MAX_PROGRAM_CALLS = 16

# Tool name -> exact set of required argument names. Rendered into the
# system prompt via tool_schema_text(); parsers validate against this.
TOOL_SCHEMAS: dict[str, frozenset[str]] = {
    "read_file": frozenset({"path"}),
    "write_file": frozenset({"path", "content"}),
    "list_files": frozenset({"path"}),
}

_VAR_REF = re.compile(r"\$([A-Za-z_]\w*)")
_VAR_NAME = re.compile(r"^[A-Za-z_]\w*$")


def tool_schema_text() -> str:
    """One line per tool, exactly as advertised to the model."""
    return "read_file(path), write_file(path, content), list_files(path)"


@dataclass(frozen=True)
class JailedPath:
    """A path known to resolve inside the workspace root.

    ``rel`` is a normalized, forward-slash relative path; the empty
    string denotes the root itself.
    """

    root: Path
    rel: str

    @property
    def full(self) -> Path:
        return self.root / self.rel if self.rel else self.root


@dataclass(frozen=True)
class ToolCall:
    tool: str
    args: dict[str, str]
    bind: str | None = None


@dataclass(frozen=True)
class ActionProgram:
    """An ordered batch of tool calls emitted by the model in one reply."""

    calls: tuple[ToolCall, ...]

    def signature(self) -> tuple:
        """Equality key used by the repetition detector: tools and args
        only, binds ignored."""
        return tuple((c.tool, tuple(sorted(c.args.items()))) for c in self.calls)


@dataclass(frozen=True)
class Observation:
    """What the executor feeds back into the model's context."""

    body: str
    error: str | None = None
    truncated: bool = False
    duration: float = 0.0


def validate_program(calls: list[ToolCall]) -> str | None:
    """Check ActionProgram invariants; return a fault description or None.

    Enforced here so the executor can assume valid programs.
    """
    if len(calls) > MAX_PROGRAM_CALLS:
        return f"program has {len(calls)} calls, limit is {MAX_PROGRAM_CALLS}"
    bound: set[str] = set()
    for i, call in enumerate(calls, start=1):
        schema = TOOL_SCHEMAS.get(call.tool)
        if schema is None:
            return f"call {i}: unknown tool {call.tool!r}"
        keys = set(call.args)
        if keys != schema:
            missing = sorted(schema - keys)
            extra = sorted(keys - schema)
            parts = []
            if missing:
                parts.append("missing args: " + ", ".join(missing))
            if extra:
                parts.append("unexpected args: " + ", ".join(extra))
            return f"call {i} ({call.tool}): " + "; ".join(parts)
        for key, value in call.args.items():
            if not isinstance(value, str):
                return f"call {i} ({call.tool}): arg {key!r} must be a string"
            for ref in _VAR_REF.findall(value):
                if ref not in bound:
                    return f"call {i} ({call.tool}): unbound variable ${ref}"
        if call.bind is not None:
            if not _VAR_NAME.match(call.bind):
                return f"call {i}: invalid bind name {call.bind!r}"
            bound.add(call.bind)
    return None


def resolve_jailed(root: Path, requested: str) -> JailedPath:
    """Normalize ``requested`` against ``root``, rejecting any escape.

    Raises InvalidPath (empty or NUL), AbsolutePathRejected, or
    JailEscape. As a second line of defense after the lexical check,
    the canonical (symlink-resolved) result must still sit under the
    canonical root.
    """
    if not isinstance(requested, str) or requested == "":
        raise InvalidPath("(empty path)")
    if "\0" in requested:
        raise InvalidPath(requested.replace("\0", "\\0"))
    # Treat backslashes as separators too; models trained on Windows
    # paths emit them, and they must not smuggle dot segments through.
    text = requested.replace("\\", "/")
    if text.startswith("/") or re.match(r"^[A-Za-z]:", text):
        raise AbsolutePathRejected(requested)
    parts: list[str] = []
    for segment in text.split("/"):
        if segment in ("", "."):
            continue
        if segment == "..":
            if not parts:
                raise JailEscape(requested)
            parts.pop()
        else:
            parts.append(segment)
    rel = "/".join(parts)
    canon_root = os.path.realpath(root)
    candidate = os.path.join(canon_root, rel) if rel else canon_root
    canon = os.path.realpath(candidate)
    if canon != canon_root and not canon.startswith(canon_root + os.sep):
        raise JailEscape(requested)
    return JailedPath(root=Path(root), rel=rel)


def read_file(path: JailedPath, cap: int = DEFAULT_OBSERVATION_CAP) -> tuple[str, bool]:
    """Return (content, truncated). Content is cut at ``cap`` characters."""
    target = path.full
    if not target.exists():
        raise NotFound(path.rel or ".")
    if not target.is_file():
        raise NotAFile(path.rel or ".")
    try:
        data = target.read_bytes()
    except OSError as exc:
        raise IoError(f"{path.rel}: {exc.strerror or exc}") from exc
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise NotUtf8(f"{path.rel}: {exc.reason} at byte {exc.start}") from exc
    if len(text) > cap:
        return text[:cap], True
    return text, False


def write_file(path: JailedPath, content: str) -> int:
    """Overwrite ``path`` with ``content``, creating parents inside the
    jail. Returns the number of bytes written."""
    target = path.full
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        data = content.encode("utf-8")
        target.write_bytes(data)
    except OSError as exc:
        raise IoError(f"{path.rel}: {exc.strerror or exc}") from exc
    return len(data)


def list_files(path: JailedPath) -> list[tuple[str, str, int]]:
    """Entries of a directory as (name, kind, size), sorted by name.

    Hidden entries are included; directories report size 0 so listings
    are stable across filesystems.
    """
    target = path.full
    if not target.exists():
        raise NotFound(path.rel or ".")
    if not target.is_dir():
        raise NotADirectory(path.rel or ".")
    entries = []
    for child in sorted(target.iterdir(), key=lambda p: p.name):
        if child.is_dir():
            entries.append((child.name, "dir", 0))
        else:
            try:
                size = child.stat().st_size
            except OSError:
                size = 0
            entries.append((child.name, "file", size))
    return entries


def render_listing(entries: list[tuple[str, str, int]]) -> str:
    return "\n".join(f"{name} {kind} {size}" for name, kind, size in entries)


class Toolbelt:
    """Executes tool calls inside one workspace jail.

    Tracks the relative paths written during the current run so the
    end-of-run record can list them as artifacts.
    """

    def __init__(
        self,
        root: Path | str,
        cap: int = DEFAULT_OBSERVATION_CAP,
        subprocess_enabled: bool = False,
        command_template: str | None = None,
        timeout: float = DEFAULT_SUBPROCESS_TIMEOUT,
    ):
        self.root = Path(root)
        self.cap = cap
        self.subprocess_enabled = subprocess_enabled
        self.command_template = command_template
        self.timeout = timeout
        self._written: list[str] = []
        self._tmp_counter = 0

    def take_written(self) -> list[str]:
        """Return and clear the paths written since the last call."""
        written, self._written = self._written, []
        return written

    def _run_call(self, call: ToolCall, binds: dict[str, str]) -> str:
        args = {
            key: _VAR_REF.sub(lambda m: binds.get(m.group(1), m.group(0)), value)
            for key, value in call.args.items()
        }
        if call.tool == "read_file":
            jp = resolve_jailed(self.root, args["path"])
            text, _ = read_file(jp, self.cap)
            return text
        if call.tool == "write_file":
            jp = resolve_jailed(self.root, args["path"])
            n = write_file(jp, args["content"])
            if jp.rel not in self._written:
                self._written.append(jp.rel)
            return f"wrote {n} bytes"
        if call.tool == "list_files":
            jp = resolve_jailed(self.root, args["path"])
            return render_listing(list_files(jp))
        raise ToolError(f"unknown tool {call.tool!r}")

    def execute(self, program: ActionProgram) -> Observation:
        """Run the program's calls in order, stopping at the first error.

        Partial effects before a failing call are kept. All failures are
        encoded into the Observation, never raised.
        """
        start = time.monotonic()
        lines: list[str] = []
        binds: dict[str, str] = {}
        error: str | None = None
        for i, call in enumerate(program.calls, start=1):
            try:
                result = self._run_call(call, binds)
            except ToolError as exc:
                error = f"{type(exc).__name__}: {exc}"
                break
            if call.bind:
                binds[call.bind] = result
            lines.append(f"[{i}] {call.tool} → {result}")
        body = "\n".join(lines)
        truncated = False
        if len(body) > self.cap:
            body = body[: self.cap]
            truncated = True
        return Observation(
            body=body,
            error=error,
            truncated=truncated,
            duration=time.monotonic() - start,
        )

    def execute_subprocess(self, source: str) -> Observation:
        """Write ``source`` to a temp file in the jail and run the
        configured interpreter command on it.

        Combined output is captured up to the cap; the process is killed
        at the timeout. Failures are encoded, never raised.
        """
        start = time.monotonic()
        if not self.subprocess_enabled or not self.command_template:
            return Observation(body="", error="subprocess execution disabled")
        self._tmp_counter += 1
        tmp_rel = f".openloop/prog-{self._tmp_counter}"
        tmp = self.root / tmp_rel
        try:
            tmp.parent.mkdir(parents=True, exist_ok=True)
            tmp.write_text(source, encoding="utf-8")
            argv = [
                part.replace("{file}", str(tmp))
                for part in shlex.split(self.command_template)
            ]
            try:
                proc = subprocess.run(
                    argv,
                    cwd=self.root,
                    stdout=subprocess.PIPE,
                    stderr=subprocess.STDOUT,
                    timeout=self.timeout,
                )
            except subprocess.TimeoutExpired:
                timeout = self.timeout
                shown = int(timeout) if float(timeout).is_integer() else timeout
                return Observation(
                    body="",
                    error=f"Timeout after {shown}s",
                    duration=time.monotonic() - start,
                )
            except OSError as exc:
                return Observation(
                    body="",
                    error=f"spawn failed: {exc.strerror or exc}",
                    duration=time.monotonic() - start,
                )
            body = proc.stdout.decode("utf-8", errors="replace")
            truncated = False
            if len(body) > self.cap:
                body = body[: self.cap]
                truncated = True
            error = None if proc.returncode == 0 else f"exit status {proc.returncode}"
            return Observation(
                body=body,
                error=error,
                truncated=truncated,
                duration=time.monotonic() - start,
            )
        finally:
            try:
                tmp.unlink(missing_ok=True)
            except OSError:
                pass
