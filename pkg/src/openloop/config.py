"""Configuration loading and validation.

A single JSON file describes the model endpoint, the workspace jail,
memory, loop behavior, the executor, prompt overrides, and the
optional HTTP service. Unknown keys are rejected so typos fail loudly.
All relative paths resolve against the config file's directory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from .errors import ConfigError
from .goals import DEFAULT_DEDUP_THRESHOLD, DUPLICATE_POLICIES
from .memory import DEFAULT_DIGEST_BUDGET, DEFAULT_DIGEST_ENTRIES
from .promptkit import DEFAULT_CHAR_BUDGET
from .react import DEFAULT_MAX_STEPS, MODE_SUBPROCESS, MODE_TOOLCALLS
from .toolbelt import DEFAULT_OBSERVATION_CAP, DEFAULT_SUBPROCESS_TIMEOUT

SCRIPTED_SCHEME = "scripted:"


@dataclass(frozen=True)
class ModelConfig:
    endpoint: str
    name: str = "local"
    temperature: float = 0.7
    max_tokens: int = 2048
    timeout: float = 120.0
    max_retries: int = 2


@dataclass(frozen=True)
class MemoryConfig:
    path: str = ""
    store_feedback: bool = True
    max_entries: int = DEFAULT_DIGEST_ENTRIES
    char_budget: int = DEFAULT_DIGEST_BUDGET


@dataclass(frozen=True)
class LoopConfig:
    max_steps: int = DEFAULT_MAX_STEPS
    max_runs: int | None = None
    duplicate_policy: str = "warn"
    dedup_threshold: float = DEFAULT_DEDUP_THRESHOLD
    observation_cap: int = DEFAULT_OBSERVATION_CAP
    char_budget: int = DEFAULT_CHAR_BUDGET
    start_paused: bool = False


@dataclass(frozen=True)
class ExecutorConfig:
    mode: str = MODE_TOOLCALLS
    command_template: str = ""
    timeout: float = DEFAULT_SUBPROCESS_TIMEOUT


@dataclass(frozen=True)
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8080
    static_dir: str | None = None


@dataclass(frozen=True)
class PromptsConfig:
    template_path: str | None = None
    nudges_path: str | None = None


@dataclass(frozen=True)
class Config:
    model: ModelConfig
    workspace_root: str
    memory: MemoryConfig = field(default_factory=MemoryConfig)
    loop: LoopConfig = field(default_factory=LoopConfig)
    executor: ExecutorConfig = field(default_factory=ExecutorConfig)
    service: ServiceConfig = field(default_factory=ServiceConfig)
    prompts: PromptsConfig = field(default_factory=PromptsConfig)
    queries: tuple[str, ...] = ()

    @property
    def runs_dir(self) -> str:
        """Run logs live in runs/ next to the memory file."""
        return str(Path(self.memory.path).parent / "runs")


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigError(message)


def _section(data: dict[str, Any], key: str, cls, base_dir: Path, path_keys: tuple[str, ...] = ()):
    raw = data.pop(key, None)
    if raw is None:
        return cls()
    _require(isinstance(raw, dict), f"{key} must be an object")
    allowed = {f.name for f in fields(cls)}
    unknown = set(raw) - allowed
    _require(not unknown, f"unknown keys in {key}: {sorted(unknown)}")
    kwargs = dict(raw)
    for pk in path_keys:
        if kwargs.get(pk) is not None:
            kwargs[pk] = str((base_dir / kwargs[pk]).resolve())
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad {key} section: {exc}") from None


def from_dict(
    data: dict[str, Any], base_dir: Path, workspace_override: str | None = None
) -> Config:
    _require(isinstance(data, dict), "config root must be an object")
    data = dict(data)

    model_raw = data.pop("model", None)
    _require(isinstance(model_raw, dict), "model section is required")
    _require("endpoint" in model_raw, "model.endpoint is required")
    allowed = {f.name for f in fields(ModelConfig)}
    unknown = set(model_raw) - allowed
    _require(not unknown, f"unknown keys in model: {sorted(unknown)}")
    model = ModelConfig(**model_raw)
    if model.endpoint.startswith(SCRIPTED_SCHEME):
        script = model.endpoint[len(SCRIPTED_SCHEME):]
        _require(bool(script), "scripted endpoint needs a file path")
        resolved = str((base_dir / script).resolve())
        model = ModelConfig(**{**model_raw, "endpoint": SCRIPTED_SCHEME + resolved})
    else:
        _require(
            model.endpoint.startswith(("http://", "https://")),
            "model.endpoint must be http(s):// or scripted:<path>",
        )
    _require(0.0 <= model.temperature <= 2.0, "model.temperature must be in [0, 2]")
    _require(model.max_tokens >= 1, "model.max_tokens must be positive")
    _require(model.timeout > 0, "model.timeout must be positive")
    _require(0 <= model.max_retries <= 5, "model.max_retries must be in 0..5")

    workspace_raw = data.pop("workspace_root", None)
    _require(
        isinstance(workspace_raw, str) and workspace_raw != "", "workspace_root is required"
    )
    workspace_root = str((base_dir / workspace_raw).resolve())
    if workspace_override is not None:
        # CLI override replaces the jail; the default memory location
        # below follows it, but an explicit memory.path still wins.
        workspace_root = str(Path(workspace_override).resolve())

    memory = _section(data, "memory", MemoryConfig, base_dir, path_keys=("path",))
    if not memory.path:
        memory = MemoryConfig(
            path=str(Path(workspace_root) / "memory.jsonl"),
            store_feedback=memory.store_feedback,
            max_entries=memory.max_entries,
            char_budget=memory.char_budget,
        )
    _require(memory.max_entries >= 1, "memory.max_entries must be at least 1")
    _require(memory.char_budget >= 1, "memory.char_budget must be positive")

    loop = _section(data, "loop", LoopConfig, base_dir)
    _require(loop.max_steps >= 1, "loop.max_steps must be at least 1")
    _require(
        loop.max_runs is None or loop.max_runs >= 1,
        "loop.max_runs must be at least 1 when present",
    )
    _require(loop.char_budget >= 1, "loop.char_budget must be positive")
    _require(loop.observation_cap >= 1, "loop.observation_cap must be positive")
    _require(
        loop.duplicate_policy in DUPLICATE_POLICIES,
        f"loop.duplicate_policy must be one of {list(DUPLICATE_POLICIES)}",
    )
    _require(0.0 <= loop.dedup_threshold <= 1.0, "loop.dedup_threshold must be in [0, 1]")

    executor = _section(data, "executor", ExecutorConfig, base_dir)
    _require(
        executor.mode in (MODE_TOOLCALLS, MODE_SUBPROCESS),
        f"executor.mode must be {MODE_TOOLCALLS!r} or {MODE_SUBPROCESS!r}",
    )
    _require(executor.timeout > 0, "executor.timeout must be positive")
    if executor.mode == MODE_SUBPROCESS:
        _require(
            "{file}" in executor.command_template,
            "executor.command_template must contain {file}",
        )

    service = _section(data, "service", ServiceConfig, base_dir, path_keys=("static_dir",))
    _require(0 <= service.port <= 65535, "service.port must be in 0..65535")

    prompts = _section(
        data, "prompts", PromptsConfig, base_dir, path_keys=("template_path", "nudges_path")
    )

    queries_raw = data.pop("queries", [])
    _require(
        isinstance(queries_raw, list) and all(isinstance(q, str) for q in queries_raw),
        "queries must be a list of strings",
    )

    _require(not data, f"unknown top-level keys: {sorted(data)}")
    return Config(
        model=model,
        workspace_root=workspace_root,
        memory=memory,
        loop=loop,
        executor=executor,
        service=service,
        prompts=prompts,
        queries=tuple(queries_raw),
    )


def load_config(path: str | Path, workspace_override: str | None = None) -> Config:
    """Parse and validate a JSON config file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    return from_dict(data, path.resolve().parent, workspace_override)
