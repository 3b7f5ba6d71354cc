"""Minimal OpenAI-compatible chat-completions client.

Shared by the chat-model agent and the LLM judge. The httpx client is
injectable so tests run against a MockTransport; auth comes from an
environment variable, never from config files.
"""

from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass, field

import httpx

from .errors import EndpointError

logger = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 60.0
DEFAULT_MAX_RETRIES = 3
BACKOFF_BASE_S = 0.5


class CompletionUnavailable(EndpointError):
    """The chat endpoint failed after all retries."""


@dataclass
class ChatUsage:
    prompt_tokens: int = 0
    completion_tokens: int = 0


@dataclass
class ToolCall:
    call_id: str
    name: str
    arguments: str


@dataclass
class ChatResult:
    content: str
    tool_calls: list[ToolCall] = field(default_factory=list)
    usage: ChatUsage = field(default_factory=ChatUsage)
    raw: dict = field(default_factory=dict)


class ChatCompletionsClient:
    def __init__(
        self,
        endpoint: str,
        model: str,
        *,
        temperature: float = 0.0,
        max_tokens: int | None = None,
        max_retries: int = DEFAULT_MAX_RETRIES,
        api_key_env: str = "OPENAI_API_KEY",
        client: httpx.Client | None = None,
        sleeper=time.sleep,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.temperature = temperature
        self.max_tokens = max_tokens
        self.max_retries = max_retries
        self.api_key_env = api_key_env
        self._client = client or httpx.Client(timeout=DEFAULT_TIMEOUT)
        self._sleep = sleeper

    def close(self) -> None:
        self._client.close()

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def complete(self, messages: list[dict], *, tools: list[dict] | None = None) -> ChatResult:
        """POST one chat completion, retrying transport errors and 5xx
        with exponential backoff before raising CompletionUnavailable.
        """
        payload: dict = {
            "model": self.model,
            "messages": messages,
            "temperature": self.temperature,
        }
        if self.max_tokens is not None:
            payload["max_tokens"] = self.max_tokens
        if tools:
            payload["tools"] = tools

        url = f"{self.endpoint}/chat/completions"
        last_error: Exception | None = None
        for attempt in range(self.max_retries):
            try:
                response = self._client.post(url, json=payload, headers=self._headers())
            except httpx.HTTPError as exc:
                last_error = exc
                logger.warning("chat endpoint attempt %d failed: %r", attempt + 1, exc)
                self._sleep(BACKOFF_BASE_S * (2**attempt))
                continue
            if response.status_code >= 500 or response.status_code == 429:
                last_error = EndpointError(f"HTTP {response.status_code}")
                self._sleep(BACKOFF_BASE_S * (2**attempt))
                continue
            if response.status_code != 200:
                raise CompletionUnavailable(f"{url}: HTTP {response.status_code}: {response.text[:200]}")
            return self._parse(response.json())
        raise CompletionUnavailable(f"{url}: {last_error!r} after {self.max_retries} attempts")

    @staticmethod
    def _parse(body: dict) -> ChatResult:
        try:
            message = body["choices"][0]["message"]
        except (KeyError, IndexError, TypeError) as exc:
            raise CompletionUnavailable(f"malformed completion body: {exc!r}") from exc
        content = message.get("content") or ""
        tool_calls = []
        for call in message.get("tool_calls") or []:
            function = call.get("function", {})
            tool_calls.append(
                ToolCall(
                    call_id=str(call.get("id", "")),
                    name=str(function.get("name", "")),
                    arguments=str(function.get("arguments", "")),
                )
            )
        usage_body = body.get("usage") or {}
        usage = ChatUsage(
            prompt_tokens=int(usage_body.get("prompt_tokens", 0)),
            completion_tokens=int(usage_body.get("completion_tokens", 0)),
        )
        return ChatResult(content=content, tool_calls=tool_calls, usage=usage, raw=body)
