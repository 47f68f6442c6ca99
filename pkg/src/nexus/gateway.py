"""Provider-agnostic chat-completion access.

Three interchangeable backends:

* ``HttpChatBackend`` - generic JSON-over-HTTP chat schema with retries,
  so the pipeline never binds to one vendor.
* ``ScriptedBackend`` - canned responses (ordered or pattern-keyed) for
  deterministic offline runs; responders may be callables for fixtures
  that must adapt to the incoming prompt.
* ``ReplayBackend`` - content-addressed cache in front of any backend;
  cache writes are atomic so concurrent workers can share a directory.

Requests are cache-keyed on full prompt content, so editing a prompt
invalidates its cached response.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import requests

from .errors import (
    AuthMissing,
    BackendError,
    ConfigError,
    ProviderRejected,
    ScriptExhausted,
    TransientExhausted,
)

DEFAULT_TEMPERATURE = 0.1
DEFAULT_AUTH_ENV = "NEXUS_LLM_API_KEY"
RETRY_BACKOFFS = (1.0, 2.0, 4.0)


@dataclass(frozen=True)
class LlmRequest:
    backend_id: str
    model_id: str
    system_prompt: str
    user_prompt: str
    temperature: float = DEFAULT_TEMPERATURE
    max_output_tokens: int = 4096

    def __post_init__(self):
        if not self.system_prompt or not self.user_prompt:
            raise ConfigError("prompts must be nonempty")
        if not 0.0 <= self.temperature <= 2.0:
            raise ConfigError(f"temperature {self.temperature} outside [0, 2]")
        if self.max_output_tokens < 1:
            raise ConfigError("max_output_tokens must be positive")


@dataclass(frozen=True)
class LlmResponse:
    text: str
    input_tokens: int = 0
    output_tokens: int = 0
    latency_ms: int = 0
    from_cache: bool = False


def cache_key(request: LlmRequest) -> str:
    """Stable content digest over everything that shapes the completion."""
    payload = json.dumps(
        {
            "backend_id": request.backend_id,
            "model_id": request.model_id,
            "temperature": request.temperature,
            "system_prompt": request.system_prompt,
            "user_prompt": request.user_prompt,
        },
        sort_keys=True,
        ensure_ascii=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def _pseudo_usage(request: LlmRequest, text: str) -> tuple[int, int]:
    # rough 4-chars-per-token estimate; deterministic for scripted runs
    return (len(request.system_prompt) + len(request.user_prompt)) // 4, len(text) // 4


Responder = Callable[[LlmRequest], str]


class ScriptedBackend:
    """Canned responses, either consumed in order or keyed by prompt content.

    Pattern rules are (substring, response) pairs matched against the
    concatenated system+user prompt; the first match wins.  Responses may be
    plain strings or callables taking the request.  An exhausted ordered
    script (without ``cyclic``) or an unmatched pattern raises
    ``ScriptExhausted`` - never a silent reuse.
    """

    def __init__(
        self,
        backend_id: str = "scripted",
        responses: Sequence[str | Responder] | None = None,
        rules: Sequence[tuple[str, str | Responder]] | None = None,
        cyclic: bool = False,
    ):
        if (responses is None) == (rules is None):
            raise ConfigError("provide exactly one of responses= or rules=")
        self.backend_id = backend_id
        self._responses = list(responses) if responses is not None else None
        self._rules = list(rules) if rules is not None else None
        self._cyclic = cyclic
        self._cursor = 0
        self._lock = threading.Lock()

    def complete(self, request: LlmRequest) -> LlmResponse:
        if self._responses is not None:
            with self._lock:
                if self._cursor >= len(self._responses):
                    if not self._cyclic or not self._responses:
                        raise ScriptExhausted(
                            f"scripted backend {self.backend_id!r} has no responses left"
                        )
                    self._cursor = 0
                entry = self._responses[self._cursor]
                self._cursor += 1
        else:
            haystack = request.system_prompt + "\n" + request.user_prompt
            entry = None
            for pattern, candidate in self._rules:
                if pattern in haystack:
                    entry = candidate
                    break
            if entry is None:
                raise ScriptExhausted(
                    f"scripted backend {self.backend_id!r}: no rule matches request"
                )
        text = entry(request) if callable(entry) else entry
        itok, otok = _pseudo_usage(request, text)
        return LlmResponse(text=text, input_tokens=itok, output_tokens=otok)


class ReplayBackend:
    """Content-addressed replay cache over a fallback backend.

    One JSON file per cache key holds the request and response; writes go
    through a temp file and an atomic rename so concurrent workers never
    observe partial entries.
    """

    def __init__(self, cache_dir: str | Path, fallback=None, backend_id: str = "replay"):
        self.backend_id = backend_id
        self.cache_dir = Path(cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        self.fallback = fallback

    def _path(self, key: str) -> Path:
        return self.cache_dir / f"{key}.json"

    def complete(self, request: LlmRequest) -> LlmResponse:
        key = cache_key(request)
        path = self._path(key)
        if path.exists():
            entry = json.loads(path.read_text(encoding="utf-8"))
            resp = entry["response"]
            return LlmResponse(
                text=resp["text"],
                input_tokens=resp["input_tokens"],
                output_tokens=resp["output_tokens"],
                from_cache=True,
            )
        if self.fallback is None:
            raise BackendError(f"replay cache miss for {key} and no fallback backend")
        fresh = self.fallback.complete(request)
        entry = {
            "request": {
                "backend_id": request.backend_id,
                "model_id": request.model_id,
                "system_prompt": request.system_prompt,
                "user_prompt": request.user_prompt,
                "temperature": request.temperature,
                "max_output_tokens": request.max_output_tokens,
            },
            "response": {
                "text": fresh.text,
                "input_tokens": fresh.input_tokens,
                "output_tokens": fresh.output_tokens,
            },
        }
        tmp = path.with_name(path.name + f".tmp{os.getpid()}.{threading.get_ident()}")
        tmp.write_text(
            json.dumps(entry, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
            encoding="utf-8",
        )
        os.replace(tmp, path)
        return LlmResponse(
            text=fresh.text,
            input_tokens=fresh.input_tokens,
            output_tokens=fresh.output_tokens,
            from_cache=False,
        )


class HttpChatBackend:
    """Generic chat-completion HTTP client.

    Request body: {model, messages: [{role, content}...], temperature,
    max_tokens}.  The response text is extracted by walking ``text_path``
    through the JSON body, so per-provider layouts are adapter config, not
    code.  Transient failures (timeouts, 429, 5xx) are retried with
    exponential backoff; other 4xx codes fail immediately.
    """

    def __init__(
        self,
        endpoint: str,
        backend_id: str = "http",
        auth_env: str = DEFAULT_AUTH_ENV,
        text_path: Sequence[str | int] = ("choices", 0, "message", "content"),
        timeout_s: float = 60.0,
        max_in_flight: int = 4,
    ):
        self.backend_id = backend_id
        self.endpoint = endpoint
        self.auth_env = auth_env
        self.text_path = tuple(text_path)
        self.timeout_s = timeout_s
        self._gate = threading.Semaphore(max_in_flight)
        self._sleep = time.sleep  # injectable for tests

    def _token(self) -> str:
        token = os.environ.get(self.auth_env, "")
        if not token:
            raise AuthMissing(f"environment variable {self.auth_env} is not set")
        return token

    def _extract_text(self, body: dict) -> str:
        node = body
        for part in self.text_path:
            try:
                node = node[part]
            except (KeyError, IndexError, TypeError) as exc:
                raise ProviderRejected(
                    f"response missing text at path {self.text_path!r}"
                ) from exc
        if not isinstance(node, str) or not node:
            raise ProviderRejected("response text is empty")
        return node

    def complete(self, request: LlmRequest) -> LlmResponse:
        token = self._token()
        payload = {
            "model": request.model_id,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": request.user_prompt},
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }
        headers = {"Authorization": f"Bearer {token}", "Content-Type": "application/json"}
        last_failure = "no attempt made"
        for attempt in range(len(RETRY_BACKOFFS) + 1):
            if attempt > 0:
                self._sleep(RETRY_BACKOFFS[attempt - 1])
            started = time.monotonic()
            try:
                with self._gate:
                    resp = requests.post(
                        self.endpoint, json=payload, headers=headers, timeout=self.timeout_s
                    )
            except requests.RequestException as exc:
                last_failure = f"transport error: {exc}"
                continue
            latency_ms = int((time.monotonic() - started) * 1000)
            if resp.status_code == 429 or resp.status_code >= 500:
                last_failure = f"HTTP {resp.status_code}"
                continue
            if resp.status_code >= 400:
                raise ProviderRejected(f"HTTP {resp.status_code}: {resp.text[:500]}")
            try:
                body = resp.json()
            except ValueError as exc:
                raise ProviderRejected(f"response body is not JSON: {exc}") from exc
            usage = body.get("usage", {})
            return LlmResponse(
                text=self._extract_text(body),
                input_tokens=int(usage.get("prompt_tokens", 0)),
                output_tokens=int(usage.get("completion_tokens", 0)),
                latency_ms=latency_ms,
            )
        raise TransientExhausted(
            f"gave up after {len(RETRY_BACKOFFS) + 1} attempts; last failure: {last_failure}"
        )


@dataclass
class Exchange:
    stage: str
    cache_key: str
    request: LlmRequest
    response: LlmResponse
    repair: bool = False


class CallRecorder:
    """Thread-safe log of every completion made on behalf of one task."""

    def __init__(self):
        self._lock = threading.Lock()
        self._exchanges: list[Exchange] = []

    def record(self, exchange: Exchange) -> None:
        with self._lock:
            self._exchanges.append(exchange)

    @property
    def exchanges(self) -> list[Exchange]:
        with self._lock:
            return list(self._exchanges)


def complete(
    backend,
    request: LlmRequest,
    recorder: CallRecorder | None = None,
    stage: str = "",
    repair: bool = False,
) -> LlmResponse:
    """Run one completion and log it to the recorder when given."""
    response = backend.complete(request)
    if not response.text:
        raise BackendError(f"backend {backend.backend_id!r} returned empty text")
    if recorder is not None:
        recorder.record(
            Exchange(
                stage=stage,
                cache_key=cache_key(request),
                request=request,
                response=response,
                repair=repair,
            )
        )
    return response
