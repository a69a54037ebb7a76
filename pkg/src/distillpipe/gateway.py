"""Uniform chat-completion access to teacher, student, and judge models.

Speaks the OpenAI-compatible ``/chat/completions`` wire format over HTTP and
provides a deterministic file-backed mock for tests. Credentials are referred
to by environment-variable name and resolved only at call time; no secret is
ever stored on an endpoint, record, or log line.
"""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Protocol, Sequence

import requests

from .core import digest_of, read_jsonl
from .costs import estimate_tokens
from .prompts import PromptInstance

logger = logging.getLogger(__name__)

RETRYABLE_STATUSES = frozenset({429, 500, 502, 503, 504})


class TransportError(RuntimeError):
    """Network-level failure that persisted through the retry budget."""


class ProviderError(RuntimeError):
    """Non-2xx response from the provider."""

    def __init__(self, status: int, body: str):
        self.status = status
        self.body = body
        super().__init__(f"provider returned {status}: {body[:200]}")


class EmptyCompletionError(RuntimeError):
    """The provider answered but produced no completion text."""


class MissingCredentialError(RuntimeError):
    """The endpoint's credential environment variable is unset."""


class UnmatchedRequestError(LookupError):
    """Mock backend received a request with no fixture entry."""


@dataclass(frozen=True)
class GenerationConfig:
    temperature: float = 0.0
    top_p: float = 1.0
    top_k: int | None = None
    max_new_tokens: int = 1024
    frequency_penalty: float = 0.0
    presence_penalty: float = 0.0
    stop: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must be in (0, 1]")
        if self.top_k is not None and self.top_k < 1:
            raise ValueError("top_k must be a positive integer")
        if not 0 < self.max_new_tokens <= 1024:
            raise ValueError("max_new_tokens must be in [1, 1024]")
        object.__setattr__(self, "stop", tuple(self.stop))

    def wire_fields(self) -> dict[str, Any]:
        return {
            "temperature": self.temperature,
            "top_p": self.top_p,
            "max_tokens": self.max_new_tokens,
            "frequency_penalty": self.frequency_penalty,
            "presence_penalty": self.presence_penalty,
            "stop": list(self.stop),
        }

    def to_dict(self) -> dict[str, Any]:
        d = self.wire_fields()
        d["top_k"] = self.top_k
        return d


@dataclass(frozen=True)
class ModelEndpoint:
    model: str
    base_url: str
    api_key_env: str | None = None
    price_per_1k_input: float = 0.0
    price_per_1k_output: float = 0.0

    def __post_init__(self) -> None:
        if self.price_per_1k_input < 0 or self.price_per_1k_output < 0:
            raise ValueError("prices must be nonnegative")

    def resolve_credential(self) -> str | None:
        if self.api_key_env is None:
            return None
        key = os.environ.get(self.api_key_env)
        if key is None:
            raise MissingCredentialError(
                f"environment variable '{self.api_key_env}' is not set"
            )
        return key


def matcher_digest(messages: Sequence[dict[str, str]], config: GenerationConfig) -> str:
    """Request identity used by the mock backend and by audit records:
    digest over the rendered messages plus every sampling parameter on the wire."""
    return digest_of({"messages": list(messages), **config.wire_fields()})


@dataclass(frozen=True)
class GenerationRecord:
    sample_id: str
    model: str
    prompt_digest: str
    config: GenerationConfig
    raw_output: str
    input_tokens: int
    output_tokens: int
    latency_s: float
    attempts: int
    tokens_estimated: bool = False
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None

    def to_dict(self) -> dict[str, Any]:
        return {
            "sample_id": self.sample_id,
            "model": self.model,
            "prompt_digest": self.prompt_digest,
            "config": self.config.to_dict(),
            "raw_output": self.raw_output,
            "input_tokens": self.input_tokens,
            "output_tokens": self.output_tokens,
            "latency_s": self.latency_s,
            "attempts": self.attempts,
            "tokens_estimated": self.tokens_estimated,
            "error": self.error,
        }


@dataclass(frozen=True)
class BackendResult:
    text: str
    input_tokens: int
    output_tokens: int
    latency_s: float
    attempts: int
    tokens_estimated: bool = False


class Backend(Protocol):
    def complete(
        self,
        endpoint: ModelEndpoint,
        messages: Sequence[dict[str, str]],
        config: GenerationConfig,
    ) -> BackendResult: ...


class MockBackend:
    """Deterministic fixture-driven backend.

    The fixture maps a request's matcher digest to canned completion text and
    token counts; anything without an entry fails loudly so a test can never
    silently exercise an unintended prompt. Optional per-digest latencies let
    ordering tests stagger completion times while keeping reported latency
    values deterministic.
    """

    def __init__(
        self,
        fixtures: dict[str, tuple[str, int, int]],
        latency_for: Callable[[str], float] | None = None,
    ):
        self._fixtures = dict(fixtures)
        self._latency_for = latency_for

    @classmethod
    def from_file(cls, path: Path) -> "MockBackend":
        fixtures: dict[str, tuple[str, int, int]] = {}
        for row in read_jsonl(path):
            fixtures[row["matcher_digest"]] = (
                row["completion"],
                int(row["input_tokens"]),
                int(row["output_tokens"]),
            )
        return cls(fixtures)

    def add(
        self,
        messages: Sequence[dict[str, str]],
        config: GenerationConfig,
        completion: str,
        input_tokens: int = 0,
        output_tokens: int = 0,
    ) -> str:
        digest = matcher_digest(messages, config)
        self._fixtures[digest] = (completion, input_tokens, output_tokens)
        return digest

    def complete(
        self,
        endpoint: ModelEndpoint,
        messages: Sequence[dict[str, str]],
        config: GenerationConfig,
    ) -> BackendResult:
        digest = matcher_digest(messages, config)
        if digest not in self._fixtures:
            raise UnmatchedRequestError(
                f"no fixture for request digest {digest} (model {endpoint.model})"
            )
        simulated = self._latency_for(digest) if self._latency_for else 0.0
        if simulated > 0:
            time.sleep(simulated)
        text, input_tokens, output_tokens = self._fixtures[digest]
        return BackendResult(
            text=text,
            input_tokens=input_tokens,
            output_tokens=output_tokens,
            latency_s=simulated,
            attempts=1,
        )


class HttpBackend:
    """OpenAI-compatible HTTP backend with bounded exponential-backoff retries.

    Transport failures and retryable statuses (429 and 5xx) are retried up to
    ``max_attempts``; other non-2xx responses raise immediately.
    """

    def __init__(
        self,
        max_attempts: int = 3,
        backoff_base_s: float = 0.5,
        backoff_factor: float = 2.0,
        timeout_s: float = 120.0,
        session: Any | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        self._max_attempts = max_attempts
        self._backoff_base_s = backoff_base_s
        self._backoff_factor = backoff_factor
        self._timeout_s = timeout_s
        self._session = session if session is not None else requests.Session()
        self._sleep = sleep

    def complete(
        self,
        endpoint: ModelEndpoint,
        messages: Sequence[dict[str, str]],
        config: GenerationConfig,
    ) -> BackendResult:
        headers = {"Content-Type": "application/json"}
        key = endpoint.resolve_credential()
        if key is not None:
            headers["Authorization"] = f"Bearer {key}"
        payload: dict[str, Any] = {
            "model": endpoint.model,
            "messages": list(messages),
            **config.wire_fields(),
        }
        if config.top_k is not None:
            payload["top_k"] = config.top_k
        url = endpoint.base_url.rstrip("/") + "/chat/completions"

        start = time.monotonic()
        delay = self._backoff_base_s
        attempt = 0
        while True:
            attempt += 1
            try:
                response = self._session.post(
                    url, json=payload, headers=headers, timeout=self._timeout_s
                )
            except requests.RequestException as exc:
                if attempt >= self._max_attempts:
                    raise TransportError(
                        f"request to {url} failed after {attempt} attempts: {exc}"
                    ) from exc
                logger.warning("transport error on attempt %d, retrying: %s", attempt, exc)
                self._sleep(delay)
                delay *= self._backoff_factor
                continue
            if response.status_code in RETRYABLE_STATUSES and attempt < self._max_attempts:
                logger.warning(
                    "status %d on attempt %d, retrying", response.status_code, attempt
                )
                self._sleep(delay)
                delay *= self._backoff_factor
                continue
            if not 200 <= response.status_code < 300:
                raise ProviderError(response.status_code, response.text)
            return self._parse(response.json(), payload, time.monotonic() - start, attempt)

    def _parse(
        self, data: dict, payload: dict, latency_s: float, attempts: int
    ) -> BackendResult:
        choices = data.get("choices") or []
        if not choices:
            raise EmptyCompletionError("provider returned no choices")
        content = (choices[0].get("message") or {}).get("content")
        if content is None:
            raise EmptyCompletionError("provider returned a choice without message content")
        usage = data.get("usage") or {}
        input_tokens = usage.get("prompt_tokens")
        output_tokens = usage.get("completion_tokens")
        estimated = input_tokens is None or output_tokens is None
        if input_tokens is None:
            input_tokens = sum(estimate_tokens(m["content"]) for m in payload["messages"])
        if output_tokens is None:
            output_tokens = estimate_tokens(content)
        return BackendResult(
            text=content,
            input_tokens=int(input_tokens),
            output_tokens=int(output_tokens),
            latency_s=latency_s,
            attempts=attempts,
            tokens_estimated=estimated,
        )


def generate(
    endpoint: ModelEndpoint,
    instance: PromptInstance,
    config: GenerationConfig,
    backend: Backend,
    sample_id: str = "",
) -> GenerationRecord:
    """One chat completion; raw output is kept verbatim for audit."""
    messages = instance.messages()
    digest = matcher_digest(messages, config)
    result = backend.complete(endpoint, messages, config)
    if result.text == "":
        raise EmptyCompletionError(f"empty completion for sample '{sample_id}'")
    return GenerationRecord(
        sample_id=sample_id,
        model=endpoint.model,
        prompt_digest=digest,
        config=config,
        raw_output=result.text,
        input_tokens=result.input_tokens,
        output_tokens=result.output_tokens,
        latency_s=result.latency_s,
        attempts=result.attempts,
        tokens_estimated=result.tokens_estimated,
    )


def _failed_record(
    endpoint: ModelEndpoint,
    instance: PromptInstance,
    config: GenerationConfig,
    sample_id: str,
    exc: Exception,
) -> GenerationRecord:
    return GenerationRecord(
        sample_id=sample_id,
        model=endpoint.model,
        prompt_digest=matcher_digest(instance.messages(), config),
        config=config,
        raw_output="",
        input_tokens=0,
        output_tokens=0,
        latency_s=0.0,
        attempts=0,
        error=f"{type(exc).__name__}: {exc}",
    )


def generate_batch(
    endpoint: ModelEndpoint,
    instances: Sequence[PromptInstance],
    config: GenerationConfig,
    backend: Backend,
    parallelism: int = 1,
    sample_ids: Sequence[str] | None = None,
) -> list[GenerationRecord]:
    """Run many completions with at most ``parallelism`` in flight.

    Output order always equals input order, and a per-item failure becomes a
    failed record in its slot instead of aborting the batch.
    """
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    ids = list(sample_ids) if sample_ids is not None else [""] * len(instances)
    if len(ids) != len(instances):
        raise ValueError("sample_ids length must match instances length")

    def run_one(pair: tuple[PromptInstance, str]) -> GenerationRecord:
        instance, sid = pair
        try:
            return generate(endpoint, instance, config, backend, sample_id=sid)
        except Exception as exc:  # captured in-place, never aborts the batch
            logger.warning("generation failed for sample '%s': %s", sid, exc)
            return _failed_record(endpoint, instance, config, sid, exc)

    if parallelism == 1:
        return [run_one(pair) for pair in zip(instances, ids)]
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(run_one, zip(instances, ids)))
