"""Model-agnostic open-ended agent loop.

The agent generates its own tasks, works on them with jailed
filesystem tools in a plan-act-observe cycle, and appends a
(task, action, outcome) record to long-term memory after every run,
so later runs build on earlier ones. A CLI, an HTTP JSON API, and a
server-sent event stream expose the loop for steering and observation.
"""

__version__ = "0.1.0"

from .config import Config, load_config
from .errors import OpenLoopError
from .events import Event, EventBus
from .gateway import ChatGateway, ChatParams, ModelReply, ScriptedModel, ScriptEntry
from .goals import TaskSpec, dedup_check, generate_task
from .memory import MemoryStore, RunRecord, Transcript
from .orchestrator import ExitSummary, Orchestrator, build_model
from .react import EpisodeResult, run_episode, summarize_run
from .service import Service
from .toolbelt import ActionProgram, Observation, Toolbelt, ToolCall

__all__ = [
    "ActionProgram",
    "ChatGateway",
    "ChatParams",
    "Config",
    "EpisodeResult",
    "Event",
    "EventBus",
    "ExitSummary",
    "MemoryStore",
    "ModelReply",
    "Observation",
    "OpenLoopError",
    "Orchestrator",
    "RunRecord",
    "ScriptEntry",
    "ScriptedModel",
    "Service",
    "TaskSpec",
    "ToolCall",
    "Toolbelt",
    "Transcript",
    "build_model",
    "dedup_check",
    "generate_task",
    "load_config",
    "run_episode",
    "summarize_run",
    "__version__",
]
