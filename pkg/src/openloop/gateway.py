"""Chat-completion access over the OpenAI-compatible wire protocol.

One blocking POST per loop step; no streaming, no function-call fields.
A deterministic ScriptedModel stands in for the HTTP gateway in tests
and offline runs, replaying fixture replies.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import requests

from .errors import (
    ModelRefusal,
    NoMatch,
    ProtocolError,
    ScriptExhausted,
    TransportError,
)
from .promptkit import Message

DEFAULT_TEMPERATURE = 0.7
DEFAULT_MAX_TOKENS = 2048
DEFAULT_TIMEOUT = 120.0
DEFAULT_MAX_RETRIES = 2

_RETRYABLE_STATUS = {429, 500, 502, 503, 504}


@dataclass(frozen=True)
class ChatParams:
    model_name: str = "local"
    temperature: float = DEFAULT_TEMPERATURE
    max_tokens: int = DEFAULT_MAX_TOKENS
    timeout: float = DEFAULT_TIMEOUT
    max_retries: int = DEFAULT_MAX_RETRIES

    def __post_init__(self):
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature {self.temperature} outside [0, 2]")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        if not 0 <= self.max_retries <= 5:
            raise ValueError("max_retries must be in [0, 5]")


@dataclass(frozen=True)
class ModelReply:
    content: str
    finish_reason: str = "stop"
    usage: dict | None = None


def build_request(messages: list[Message], params: ChatParams) -> dict:
    """Serialize a completion request to the wire format."""
    return {
        "model": params.model_name,
        "messages": [{"role": m.role, "content": m.content} for m in messages],
        "temperature": params.temperature,
        "max_tokens": params.max_tokens,
    }


def parse_request(payload: dict) -> tuple[list[tuple[str, str]], ChatParams]:
    """Inverse of build_request, for conformance checks: returns the
    (role, content) pairs and the params carried on the wire."""
    pairs = [(m["role"], m["content"]) for m in payload["messages"]]
    params = ChatParams(
        model_name=payload["model"],
        temperature=payload["temperature"],
        max_tokens=payload["max_tokens"],
    )
    return pairs, params


def _check_preconditions(messages: list[Message]) -> None:
    if not messages:
        raise ValueError("messages must be non-empty")
    if messages[0].role != "system":
        raise ValueError("first message must have role=system")


class ChatGateway:
    """Synchronous client for ``POST {endpoint}/v1/chat/completions``.

    Transient transport failures (connection errors, timeouts, and
    retryable HTTP statuses) are retried with exponential backoff up to
    ``params.max_retries``; anything else fails fast.
    """

    def __init__(
        self,
        endpoint: str,
        params: ChatParams,
        api_key: str = "",
        backoff_base: float = 0.5,
        _sleep=time.sleep,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.params = params
        self.api_key = api_key
        self.backoff_base = backoff_base
        self._sleep = _sleep

    def complete(self, messages: list[Message]) -> ModelReply:
        _check_preconditions(messages)
        url = f"{self.endpoint}/v1/chat/completions"
        body = build_request(messages, self.params)
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_fault = "unknown transport failure"
        for attempt in range(self.params.max_retries + 1):
            if attempt:
                self._sleep(self.backoff_base * 2 ** (attempt - 1))
            try:
                response = requests.post(
                    url, json=body, headers=headers, timeout=self.params.timeout
                )
            except (requests.ConnectionError, requests.Timeout) as exc:
                last_fault = f"{type(exc).__name__}: {exc}"
                continue
            if response.status_code in _RETRYABLE_STATUS:
                last_fault = f"HTTP {response.status_code}"
                continue
            if response.status_code != 200:
                raise TransportError(f"HTTP {response.status_code}: {response.text[:200]}")
            return _parse_reply(response)
        raise TransportError(
            f"gave up after {self.params.max_retries + 1} attempts: {last_fault}"
        )


def _parse_reply(response) -> ModelReply:
    try:
        data = response.json()
    except ValueError as exc:
        raise ProtocolError(f"response body is not JSON: {response.text[:80]!r}") from exc
    try:
        choice = data["choices"][0]
        content = choice["message"]["content"]
    except (KeyError, IndexError, TypeError) as exc:
        raise ProtocolError(f"response lacks choices[0].message.content: {exc}") from exc
    finish = choice.get("finish_reason") or "stop"
    if finish == "error":
        raise ModelRefusal("model reported finish_reason=error")
    if finish != "length":
        finish = "stop"
    usage = data.get("usage") if isinstance(data.get("usage"), dict) else None
    if content is None:
        content = ""
    return ModelReply(content=str(content), finish_reason=finish, usage=usage)


@dataclass(frozen=True)
class ScriptEntry:
    """One scripted reply; ``contains`` of None matches any request."""

    reply: str
    contains: str | None = None

    def accepts(self, last_message: Message) -> bool:
        return self.contains is None or self.contains in last_message.content


@dataclass
class ScriptedModel:
    """Deterministic playback model for offline runs and tests.

    Scans forward from the cursor for the first entry whose matcher
    accepts the last message, consumes it, and replays its reply.
    """

    entries: list[ScriptEntry] = field(default_factory=list)
    cursor: int = 0

    @classmethod
    def of(cls, *replies: str) -> "ScriptedModel":
        """Script of always-matching entries played in order."""
        return cls(entries=[ScriptEntry(reply=r) for r in replies])

    def complete(self, messages: list[Message]) -> ModelReply:
        _check_preconditions(messages)
        if self.cursor >= len(self.entries):
            raise ScriptExhausted(f"script of {len(self.entries)} entries exhausted")
        last = messages[-1]
        for i in range(self.cursor, len(self.entries)):
            if self.entries[i].accepts(last):
                self.cursor = i + 1
                return ModelReply(content=self.entries[i].reply, finish_reason="stop")
        raise NoMatch(f"no entry from {self.cursor} on accepts: {last.content[:60]!r}")
