"""OpenAI-compatible model client: completions, chat completions, embeddings.

One client handle is shareable across threads. The concurrency contract:
callers may issue any number of requests; at most ``concurrency_limit``
transport calls are in flight at once, each call's request/response pairing
is preserved, and no cross-call ordering is guaranteed.

Base models use the raw completions route (no chat template); instruct and
judge models use the chat route. Mock endpoints (``mock://<profile>``) are
served by :mod:`baregen.mock` through the same code path as live HTTP.
"""

from __future__ import annotations

import math
import os
import random
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import httpx

from .datastore import ResponseCache
from .errors import (
    ConfigError,
    DimensionMismatch,
    EmptyInput,
    MalformedResponse,
    RateLimited,
    TransportError,
)
from .mock import MockBackend, mock_backend
from .types import ModelEndpoint, canonical_json, sha256_hex


_RETRYABLE_STATUSES = {429, 500, 502, 503, 504}


@dataclass(frozen=True)
class CompletionRequest:
    """One generation request; prompt form for base models, messages for chat."""

    endpoint: ModelEndpoint
    prompt: str | None = None
    messages: tuple[tuple[str, str], ...] | None = None
    temperature: float | None = None
    max_tokens: int | None = None
    stop: tuple[str, ...] | None = None
    seed_tag: int = 0

    def __post_init__(self):
        if self.messages is not None and isinstance(self.messages, list):
            object.__setattr__(self, "messages", tuple(tuple(m) for m in self.messages))
        if self.endpoint.role == "base_completion":
            if self.prompt is None:
                raise ConfigError("base_completion requests need a prompt")
        elif self.endpoint.role in ("instruct_chat", "judge"):
            if self.messages is None:
                raise ConfigError(f"{self.endpoint.role} requests need messages")
        else:
            raise ConfigError(f"completion request against role {self.endpoint.role!r}")

    @property
    def route(self) -> str:
        return "completions" if self.endpoint.role == "base_completion" else "chat/completions"

    def effective_stop(self) -> tuple[str, ...]:
        return self.stop if self.stop is not None else self.endpoint.stop_sequences

    def body(self) -> dict[str, Any]:
        payload: dict[str, Any] = {
            "model": self.endpoint.model_name,
            "temperature": self.temperature if self.temperature is not None
            else self.endpoint.temperature,
            "max_tokens": self.max_tokens if self.max_tokens is not None
            else self.endpoint.max_tokens,
            "seed": self.seed_tag,
        }
        stop = self.effective_stop()
        if stop:
            payload["stop"] = list(stop)
        if self.endpoint.role == "base_completion":
            payload["prompt"] = self.prompt
        else:
            payload["messages"] = [{"role": r, "content": c} for r, c in self.messages]
        return payload


@dataclass(frozen=True)
class EmbeddingVector:
    """Fixed-length embedding; all values finite."""

    values: tuple[float, ...]
    model_name: str

    def __post_init__(self):
        if isinstance(self.values, list):
            object.__setattr__(self, "values", tuple(self.values))
        if len(self.values) == 0:
            raise EmptyInput("embedding vector must be non-empty")
        if not all(math.isfinite(v) for v in self.values):
            raise MalformedResponse("embedding contains non-finite values")


def cache_key(model_name: str, body: dict[str, Any], seed_tag: int) -> str:
    """Digest over (model, canonical request body, seed tag).

    Equal requests map to equal keys; any payload difference (temperature
    included) changes the key.
    """
    return sha256_hex(canonical_json([model_name, body, seed_tag]))


@dataclass(frozen=True)
class RetryPolicy:
    """Jittered exponential backoff with a hard attempt cap."""

    max_attempts: int = 5
    base_delay: float = 0.5
    factor: float = 2.0
    max_delay: float = 30.0

    def delay(self, attempt: int, rng: random.Random) -> float:
        # Full jitter over the exponential envelope.
        cap = min(self.max_delay, self.base_delay * self.factor ** attempt)
        return rng.uniform(0.0, cap)


class HttpTransport:
    """POSTs OpenAI-schema JSON over HTTP with bearer auth from the env."""

    def __init__(self, timeout: float = 60.0):
        self._client = httpx.Client(timeout=timeout)

    def send(self, endpoint: ModelEndpoint, route: str,
             payload: dict[str, Any]) -> tuple[int, dict[str, Any]]:
        headers = {"Content-Type": "application/json"}
        if endpoint.api_key_ref:
            key = os.environ.get(endpoint.api_key_ref)
            if not key:
                raise ConfigError(f"environment variable {endpoint.api_key_ref} is not set")
            headers["Authorization"] = f"Bearer {key}"
        url = f"{endpoint.base_url.rstrip('/')}/{route}"
        try:
            resp = self._client.post(url, json=payload, headers=headers)
        except httpx.HTTPError as exc:
            raise TransportError(f"POST {url} failed: {exc}") from exc
        try:
            body = resp.json() if resp.content else {}
        except ValueError:
            body = {}
        return resp.status_code, body


class MockTransport:
    """Adapts a MockBackend to the transport interface (always HTTP 200)."""

    def __init__(self, backend: MockBackend):
        self.backend = backend

    def send(self, endpoint: ModelEndpoint, route: str,
             payload: dict[str, Any]) -> tuple[int, dict[str, Any]]:
        return 200, self.backend.respond(route, payload)


class ScriptedTransport:
    """Replays (status, body) pairs in call order; for failure-path tests."""

    def __init__(self, script: Sequence[tuple[int, dict[str, Any]]]):
        self._script = list(script)
        self._lock = threading.Lock()
        self.calls: list[dict[str, Any]] = []

    def send(self, endpoint: ModelEndpoint, route: str,
             payload: dict[str, Any]) -> tuple[int, dict[str, Any]]:
        with self._lock:
            self.calls.append({"route": route, "payload": payload})
            if not self._script:
                raise TransportError("scripted transport exhausted")
            return self._script.pop(0)


class ModelClient:
    """Shared handle for all model traffic: retries, caching, fan-out."""

    def __init__(
        self,
        *,
        transport=None,
        cache: ResponseCache | None = None,
        concurrency_limit: int = 8,
        retry: RetryPolicy | None = None,
        embed_batch_size: int = 1000,
        mock_seed: int = 0,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self._transport_override = transport
        self._http: HttpTransport | None = None
        self._mocks: dict[str, MockTransport] = {}
        self.cache = cache
        self.concurrency_limit = max(1, concurrency_limit)
        self.retry = retry or RetryPolicy()
        self.embed_batch_size = max(1, embed_batch_size)
        self.mock_seed = mock_seed
        self._sleep = sleep
        self._jitter = random.Random()
        self._sem = threading.BoundedSemaphore(self.concurrency_limit)
        self._lock = threading.Lock()
        self.request_log: list[dict[str, Any]] = []

    # ------------------------------------------------------------------

    def _log(self, event: dict[str, Any]) -> None:
        with self._lock:
            self.request_log.append(event)

    def retry_events(self) -> list[dict[str, Any]]:
        with self._lock:
            return [e for e in self.request_log if e["event"] == "retry"]

    def transport_calls(self) -> int:
        with self._lock:
            return sum(1 for e in self.request_log if e["event"] == "transport")

    def _transport_for(self, endpoint: ModelEndpoint):
        if self._transport_override is not None:
            return self._transport_override
        if endpoint.is_mock():
            profile = endpoint.base_url[len("mock://"):]
            with self._lock:
                if profile not in self._mocks:
                    self._mocks[profile] = MockTransport(mock_backend(self.mock_seed, profile))
                return self._mocks[profile]
        with self._lock:
            if self._http is None:
                self._http = HttpTransport()
            return self._http

    def _send_with_retries(self, endpoint: ModelEndpoint, route: str,
                           payload: dict[str, Any]) -> dict[str, Any]:
        transport = self._transport_for(endpoint)
        last_error: Exception | None = None
        for attempt in range(self.retry.max_attempts):
            if attempt > 0:
                self._sleep(self.retry.delay(attempt - 1, self._jitter))
            try:
                with self._sem:
                    self._log({"event": "transport", "route": route,
                               "model": endpoint.model_name, "attempt": attempt})
                    status, body = transport.send(endpoint, route, payload)
            except TransportError as exc:
                last_error = exc
                self._log({"event": "retry", "route": route, "reason": str(exc)})
                continue
            if status == 200:
                return body
            if status in _RETRYABLE_STATUSES:
                last_error = RateLimited(f"HTTP {status}") if status == 429 \
                    else TransportError(f"HTTP {status}")
                self._log({"event": "retry", "route": route, "status": status})
                continue
            raise TransportError(f"HTTP {status} from {route}: {body}")
        if isinstance(last_error, RateLimited):
            raise last_error
        raise TransportError(f"{route} failed after {self.retry.max_attempts} attempts: "
                             f"{last_error}")

    # ------------------------------------------------------------------

    @staticmethod
    def _truncate_at_stops(text: str, stops: Sequence[str]) -> str:
        # Defense against providers that echo stop sequences back.
        cut = len(text)
        for stop in stops:
            idx = text.find(stop)
            if idx != -1:
                cut = min(cut, idx)
        return text[:cut]

    def complete(self, req: CompletionRequest) -> str:
        """Return the first choice's text, serving from cache when possible."""
        payload = req.body()
        key = cache_key(req.endpoint.model_name, payload, req.seed_tag)
        body = self.cache.get(key) if self.cache is not None else None
        fresh = body is None
        if fresh:
            body = self._send_with_retries(req.endpoint, req.route, payload)
        else:
            self._log({"event": "cache_hit", "route": req.route, "key": key})
        try:
            choice = body["choices"][0]
            text = choice["text"] if req.route == "completions" \
                else choice["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise MalformedResponse(f"cannot read first choice: {body!r}") from exc
        if not isinstance(text, str):
            raise MalformedResponse("first choice text is not a string")
        # Only responses that parsed are worth keeping.
        if fresh and self.cache is not None:
            self.cache.put(key, body)
        return self._truncate_at_stops(text, req.effective_stop())

    def map_complete(self, requests: Sequence[CompletionRequest]) -> list[str]:
        """Fan out requests under the in-flight limit, preserving order."""
        if not requests:
            return []
        with ThreadPoolExecutor(max_workers=self.concurrency_limit) as ex:
            return list(ex.map(self.complete, requests))

    def embed(self, texts: Sequence[str], endpoint: ModelEndpoint) -> list[EmbeddingVector]:
        """Embed texts in order, batching transparently.

        Raises:
            EmptyInput: no texts, or any text empty/whitespace.
            DimensionMismatch: endpoint returned inconsistent vector lengths.
        """
        if endpoint.role != "embedding":
            raise ConfigError(f"embed() needs an embedding endpoint, got {endpoint.role!r}")
        if not texts or any(not t.strip() for t in texts):
            raise EmptyInput("embedding input must be non-empty texts")
        vectors: list[EmbeddingVector] = []
        dim: int | None = None
        for start in range(0, len(texts), self.embed_batch_size):
            batch = list(texts[start:start + self.embed_batch_size])
            payload = {"model": endpoint.model_name, "input": batch}
            key = cache_key(endpoint.model_name, payload, 0)
            body = self.cache.get(key) if self.cache is not None else None
            fresh = body is None
            if fresh:
                body = self._send_with_retries(endpoint, "embeddings", payload)
            else:
                self._log({"event": "cache_hit", "route": "embeddings", "key": key})
            try:
                data = sorted(body["data"], key=lambda d: d.get("index", 0))
                batch_vectors = [d["embedding"] for d in data]
            except (KeyError, TypeError) as exc:
                raise MalformedResponse(f"cannot read embeddings: {body!r}") from exc
            if len(batch_vectors) != len(batch):
                raise MalformedResponse(
                    f"asked for {len(batch)} embeddings, got {len(batch_vectors)}")
            if fresh and self.cache is not None:
                self.cache.put(key, body)
            for vec in batch_vectors:
                if dim is None:
                    dim = len(vec)
                elif len(vec) != dim:
                    raise DimensionMismatch(
                        f"embedding length {len(vec)} != {dim} within one run")
                vectors.append(EmbeddingVector(values=tuple(float(v) for v in vec),
                                               model_name=endpoint.model_name))
        return vectors
