"""Exception hierarchy for the openloop runtime.

Everything the loop is expected to survive derives from OpenLoopError;
the orchestrator catches that base per run and keeps going. Anything
else is a bug and propagates.
"""

from __future__ import annotations


class OpenLoopError(Exception):
    """Base class for all expected runtime failures."""


# --- model gateway -----------------------------------------------------


class GatewayError(OpenLoopError):
    """Base class for model-call failures."""


class TransportError(GatewayError):
    """Network or HTTP failure after retries were exhausted."""


class ProtocolError(GatewayError):
    """Response body does not match the chat-completion wire format."""


class ModelRefusal(GatewayError):
    """The model reported an error finish instead of a completion."""


class ScriptExhausted(GatewayError):
    """A scripted model ran out of entries."""


class NoMatch(GatewayError):
    """No remaining scripted entry accepts the request."""


# --- prompt building and parsing ---------------------------------------


class PromptError(OpenLoopError):
    """Base class for prompt rendering and reply parsing failures."""


class MissingBinding(PromptError):
    """A template placeholder has no binding."""


class BudgetTooSmall(PromptError):
    """The system prompt alone exceeds the character budget."""


class NoTaskTag(PromptError):
    """Reply contains no <task>...</task> pair."""


class EmptyTask(PromptError):
    """A task tag pair is present but its content is blank."""


class MalformedAction(PromptError):
    """An action fence is present but its body does not parse."""


class NoActionOrFinal(PromptError):
    """Reply contains neither an action fence nor a final answer."""


class RecordError(PromptError):
    """Base class for run-record parsing failures."""


class NoRecordBlock(RecordError):
    """Reply contains no fenced record block."""


class MalformedRecord(RecordError):
    """A record fence is present but does not hold a JSON object."""


class MissingField(RecordError):
    """The record object lacks a required field."""


# --- memory -------------------------------------------------------------


class StorageError(OpenLoopError):
    """Long-term memory could not be written."""


# --- toolbelt -----------------------------------------------------------


class ToolError(OpenLoopError):
    """Base class for tool failures; rendered into observations as
    ``"<ClassName>: <detail>"`` so the model sees them as text."""


class InvalidPath(ToolError):
    """Empty path or a path containing a NUL byte."""


class AbsolutePathRejected(ToolError):
    """Tools accept workspace-relative paths only."""


class JailEscape(ToolError):
    """Path would resolve outside the workspace root."""


class NotFound(ToolError):
    """No such file or directory inside the workspace."""


class NotAFile(ToolError):
    """read_file target is not a regular file."""


class NotADirectory(ToolError):
    """list_files target is not a directory."""


class NotUtf8(ToolError):
    """File contents are not valid UTF-8."""


class IoError(ToolError):
    """Underlying OS error during a tool operation."""


# --- goal engine --------------------------------------------------------


class TaskGenerationFailed(OpenLoopError):
    """Both task-generation attempts produced unparseable output."""


# --- orchestrator / service ---------------------------------------------


class ConfigError(OpenLoopError):
    """Configuration file missing, unreadable, or invalid."""


class BindError(OpenLoopError):
    """Service could not bind its address."""
