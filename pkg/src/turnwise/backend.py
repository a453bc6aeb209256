"""Client for OpenAI-compatible completion endpoints.

Stop-sequence truncation is done client-side by default: the client
scans the (streamed or whole) text for the earliest stop, cuts there,
and records which stop matched.  That keeps "which stop fired" reliable
across backends that do not report it.  Set forward_stops on the config
to also pass stop sequences to the backend and save generated tokens;
the client-side scan still applies on top.

Streaming holds back max(len(stop)) - 1 characters so a stop sequence
split across chunk boundaries can never leak into delivered deltas.

Usage counts are echoed from the backend when they are trustworthy; a
client-side truncation invalidates them (the backend counted discarded
text), so the client falls back to a whitespace-piece estimate and
flags the result.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass, replace
from typing import Callable

import httpx


class BackendError(Exception):
    pass


class Timeout(BackendError):
    pass


class HttpStatusError(BackendError):
    def __init__(self, status_code: int, detail: str = ""):
        super().__init__(f"backend returned HTTP {status_code}: {detail[:200]}")
        self.status_code = status_code


class MalformedResponse(BackendError):
    pass


class StreamInterrupted(BackendError):
    """Stream ended without its done marker; carries what was delivered."""

    def __init__(self, partial_text: str, events_delivered: int):
        super().__init__(
            f"stream interrupted after {events_delivered} events ({len(partial_text)} chars)"
        )
        self.partial_text = partial_text
        self.events_delivered = events_delivered


def estimate_tokens(text: str) -> int:
    """Whitespace-piece token estimate, used when the backend sends no
    usage or its usage covers text the client discarded."""
    return len(text.split())


@dataclass(frozen=True)
class BackendConfig:
    base_url: str
    model: str
    auth_env: str = "TURNWISE_API_KEY"
    timeout_s: float = 30.0
    max_retries: int = 2
    backoff_base_s: float = 0.1
    max_inflight: int = 8
    mode: str = "completions"  # or "chat"
    forward_stops: bool = False

    def __post_init__(self):
        if self.timeout_s <= 0:
            raise ValueError("timeout must be positive")
        if self.max_retries < 0:
            raise ValueError("retries must be non-negative")
        if self.max_inflight < 1:
            raise ValueError("need at least one in-flight slot")
        if self.mode not in ("completions", "chat"):
            raise ValueError(f"unknown mode {self.mode!r}")


@dataclass(frozen=True)
class GenerationRequest:
    context: str
    stop: tuple[str, ...] = ()
    max_tokens: int = 32768
    temperature: float = 0.6
    top_p: float = 0.95
    stream: bool = False

    def __post_init__(self):
        object.__setattr__(self, "stop", tuple(self.stop))
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be at least 1")
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must lie in (0, 1]")
        if any(not s for s in self.stop):
            raise ValueError("stop sequences must be non-empty")


@dataclass(frozen=True)
class StreamEvent:
    delta: str
    timestamp: float  # time.monotonic()
    output_tokens: int  # cumulative estimate over delivered text


@dataclass(frozen=True)
class GenerationResult:
    text: str
    finish_reason: str
    matched_stop: str | None
    prompt_tokens: int
    output_tokens: int
    usage_estimated: bool
    retries: int
    started_at: float
    first_token_at: float | None
    ended_at: float

    @property
    def total_ms(self) -> float:
        return (self.ended_at - self.started_at) * 1000

    @property
    def ttft_ms(self) -> float | None:
        if self.first_token_at is None:
            return None
        return (self.first_token_at - self.started_at) * 1000


def find_stop(text: str, stops: tuple[str, ...]) -> tuple[int, str | None]:
    """Earliest stop occurrence; ties broken by stop list order."""
    best, matched = -1, None
    for stop in stops:
        idx = text.find(stop)
        if idx >= 0 and (best < 0 or idx < best):
            best, matched = idx, stop
    return best, matched


class BackendClient:
    """Thread-safe client; one shared in-flight limiter, no other state."""

    def __init__(self, config: BackendConfig):
        self.config = config
        self._client = httpx.Client(timeout=config.timeout_s)
        self._inflight = threading.BoundedSemaphore(config.max_inflight)

    def close(self) -> None:
        self._client.close()

    def __enter__(self) -> "BackendClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- request plumbing ---------------------------------------------------

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.config.auth_env, "")
        if token:
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def _endpoint(self) -> str:
        suffix = "/v1/chat/completions" if self.config.mode == "chat" else "/v1/completions"
        return self.config.base_url.rstrip("/") + suffix

    def _payload(self, request: GenerationRequest, stream: bool) -> dict:
        payload = {
            "model": self.config.model,
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
            "top_p": request.top_p,
            "stream": stream,
        }
        if self.config.mode == "chat":
            payload["messages"] = [{"role": "user", "content": request.context}]
        else:
            payload["prompt"] = request.context
        if self.config.forward_stops and request.stop:
            payload["stop"] = list(request.stop)
        return payload

    def _extract_text(self, body: dict) -> tuple[str, str]:
        try:
            choice = body["choices"][0]
            finish = choice.get("finish_reason") or "stop"
            if self.config.mode == "chat":
                return choice["message"]["content"], finish
            return choice["text"], finish
        except (KeyError, IndexError, TypeError) as exc:
            raise MalformedResponse(f"unexpected response shape: {exc!r}") from exc

    def _extract_delta(self, body: dict) -> tuple[str, str | None, dict | None]:
        try:
            choice = body["choices"][0]
            finish = choice.get("finish_reason")
            if self.config.mode == "chat":
                delta = choice.get("delta", {}).get("content", "") or ""
            else:
                delta = choice.get("text", "") or ""
            return delta, finish, body.get("usage")
        except (KeyError, IndexError, TypeError) as exc:
            raise MalformedResponse(f"unexpected stream chunk shape: {exc!r}") from exc

    def health(self) -> bool:
        try:
            resp = self._client.get(
                self.config.base_url.rstrip("/") + "/v1/models", headers=self._headers()
            )
            return resp.status_code == 200
        except httpx.HTTPError:
            return False

    # -- non-streaming ------------------------------------------------------

    def generate(self, request: GenerationRequest) -> GenerationResult:
        """One completion, returned whole.  Retries transient failures."""
        attempt = 0
        with self._inflight:
            started = time.monotonic()
            while True:
                try:
                    resp = self._client.post(
                        self._endpoint(),
                        json=self._payload(request, stream=False),
                        headers=self._headers(),
                    )
                except httpx.TimeoutException as exc:
                    if attempt < self.config.max_retries:
                        attempt += 1
                        time.sleep(self.config.backoff_base_s * 2 ** (attempt - 1))
                        continue
                    raise Timeout(f"no response within {self.config.timeout_s}s") from exc
                except httpx.TransportError as exc:
                    if attempt < self.config.max_retries:
                        attempt += 1
                        time.sleep(self.config.backoff_base_s * 2 ** (attempt - 1))
                        continue
                    raise BackendError(f"transport failure: {exc!r}") from exc
                if resp.status_code >= 500 and attempt < self.config.max_retries:
                    attempt += 1
                    time.sleep(self.config.backoff_base_s * 2 ** (attempt - 1))
                    continue
                if resp.status_code != 200:
                    raise HttpStatusError(resp.status_code, resp.text)
                try:
                    body = resp.json()
                except json.JSONDecodeError as exc:
                    raise MalformedResponse("response body is not JSON") from exc
                return self._finalize(request, body, attempt, started)

    def _finalize(
        self, request: GenerationRequest, body: dict, retries: int, started: float
    ) -> GenerationResult:
        text, finish = self._extract_text(body)
        matched_stop = None
        truncated = False
        cut, stop = find_stop(text, request.stop)
        if cut >= 0:
            text, matched_stop, finish, truncated = text[:cut], stop, "stop", True
        usage = body.get("usage")
        if usage is not None and not truncated:
            prompt_tokens = int(usage.get("prompt_tokens", 0))
            output_tokens = int(usage.get("completion_tokens", 0))
            estimated = False
        else:
            prompt_tokens = estimate_tokens(request.context)
            output_tokens = estimate_tokens(text)
            estimated = True
        ended = time.monotonic()
        return GenerationResult(
            text=text,
            finish_reason=finish,
            matched_stop=matched_stop,
            prompt_tokens=prompt_tokens,
            output_tokens=output_tokens,
            usage_estimated=estimated,
            retries=retries,
            started_at=started,
            first_token_at=ended if text else None,
            ended_at=ended,
        )

    # -- streaming ----------------------------------------------------------

    def generate_stream(
        self, request: GenerationRequest, sink: Callable[[StreamEvent], None]
    ) -> GenerationResult:
        """Stream a completion through sink; return the final result.

        Retries only happen before the first delivered event, so callers
        never see duplicated text.
        """
        if not request.stream:
            raise ValueError("generate_stream requires request.stream")
        attempt = 0
        with self._inflight:
            started = time.monotonic()
            while True:
                try:
                    return self._stream_once(request, sink, attempt, started)
                except _RetryableStreamError as exc:
                    if exc.events_delivered == 0 and attempt < self.config.max_retries:
                        attempt += 1
                        time.sleep(self.config.backoff_base_s * 2 ** (attempt - 1))
                        continue
                    raise exc.to_public() from exc

    def _stream_once(
        self,
        request: GenerationRequest,
        sink: Callable[[StreamEvent], None],
        attempt: int,
        started: float,
    ) -> GenerationResult:
        delivered: list[str] = []
        events = 0
        pending = ""
        holdback = max((len(s) for s in request.stop), default=1) - 1
        matched_stop: str | None = None
        finish: str | None = None
        usage: dict | None = None
        done_seen = False
        truncated = False
        first_token_at: float | None = None

        def emit(delta: str) -> None:
            nonlocal events, first_token_at
            if not delta:
                return
            delivered.append(delta)
            now = time.monotonic()
            if first_token_at is None:
                first_token_at = now
            events += 1
            sink(StreamEvent(delta=delta, timestamp=now, output_tokens=estimate_tokens("".join(delivered))))

        try:
            with self._client.stream(
                "POST",
                self._endpoint(),
                json=self._payload(request, stream=True),
                headers=self._headers(),
            ) as resp:
                if resp.status_code >= 500:
                    raise _RetryableStreamError(HttpStatusError(resp.status_code), events)
                if resp.status_code != 200:
                    resp.read()
                    raise HttpStatusError(resp.status_code, resp.text)
                for line in resp.iter_lines():
                    if not line.startswith("data:"):
                        continue
                    data = line[len("data:"):].strip()
                    if data == "[DONE]":
                        done_seen = True
                        break
                    try:
                        chunk = json.loads(data)
                    except json.JSONDecodeError as exc:
                        raise MalformedResponse(f"bad stream chunk: {data[:80]!r}") from exc
                    delta, chunk_finish, chunk_usage = self._extract_delta(chunk)
                    if chunk_finish:
                        finish = chunk_finish
                    if chunk_usage:
                        usage = chunk_usage
                    if not delta:
                        continue
                    pending += delta
                    cut, stop = find_stop(pending, request.stop)
                    if cut >= 0:
                        emit(pending[:cut])
                        pending = ""
                        matched_stop, finish, truncated = stop, "stop", True
                        done_seen = True
                        break
                    if holdback and len(pending) > holdback:
                        emit(pending[:-holdback])
                        pending = pending[-holdback:]
                    elif not holdback:
                        emit(pending)
                        pending = ""
        except httpx.TimeoutException as exc:
            raise _RetryableStreamError(
                Timeout(f"stream stalled beyond {self.config.timeout_s}s"), events
            ) from exc
        except httpx.TransportError as exc:
            raise _RetryableStreamError(
                StreamInterrupted("".join(delivered) + pending, events), events
            ) from exc

        if not done_seen:
            raise _RetryableStreamError(
                StreamInterrupted("".join(delivered) + pending, events), events
            )
        if not truncated:
            emit(pending)
        text = "".join(delivered)
        if usage is not None and not truncated:
            prompt_tokens = int(usage.get("prompt_tokens", 0))
            output_tokens = int(usage.get("completion_tokens", 0))
            estimated = False
        else:
            prompt_tokens = estimate_tokens(request.context)
            output_tokens = estimate_tokens(text)
            estimated = True
        ended = time.monotonic()
        return GenerationResult(
            text=text,
            finish_reason=finish or "stop",
            matched_stop=matched_stop,
            prompt_tokens=prompt_tokens,
            output_tokens=output_tokens,
            usage_estimated=estimated,
            retries=attempt,
            started_at=started,
            first_token_at=first_token_at,
            ended_at=ended,
        )

    # -- conveniences -------------------------------------------------------

    def continue_with_forced_suffix(
        self,
        context: str,
        forced_text: str,
        request: GenerationRequest,
        sink: Callable[[StreamEvent], None] | None = None,
    ) -> GenerationResult:
        """Generate from context + forced_text.  The forced text rides in
        the prompt, so it never counts as generated output."""
        merged = replace(request, context=context + forced_text)
        if merged.stream and sink is not None:
            return self.generate_stream(merged, sink)
        return self.generate(replace(merged, stream=False))

    def generate_text(self, prompt: str, temperature: float | None = None, max_tokens: int | None = None) -> str:
        """Plain text in, plain text out, for one-shot utility calls."""
        request = GenerationRequest(
            context=prompt,
            temperature=0.6 if temperature is None else temperature,
            max_tokens=max_tokens or 32768,
        )
        return self.generate(request).text


class _RetryableStreamError(Exception):
    """Internal: wraps an error that may be retried pre-first-byte."""

    def __init__(self, public: BackendError, events_delivered: int):
        super().__init__(str(public))
        self.public = public
        self.events_delivered = events_delivered

    def to_public(self) -> BackendError:
        return self.public
