"""Client for hosted fine-tuning services.

The student is trained by an external platform, not locally: we validate and
upload the emitted dataset, create a job with the three training knobs,
poll until terminal, and record the resulting endpoint. A schedule-driven
mock provider stands in for the platform in tests.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Callable, Protocol

import requests

from .core import read_jsonl, sha256_file
from .gateway import ModelEndpoint, ProviderError

logger = logging.getLogger(__name__)

JOB_STATUSES = ("pending", "running", "succeeded", "failed")
_STATUS_RANK = {status: rank for rank, status in enumerate(("pending", "running"))}
_STATUS_RANK.update({"succeeded": 2, "failed": 2})

MESSAGE_ROLES = ("system", "user", "assistant")


class SchemaError(ValueError):
    """Fine-tune dataset violates the three-role message schema."""


class DeadlineExceeded(TimeoutError):
    pass


@dataclass(frozen=True)
class FinetuneConfig:
    base_model: str
    batch_size_multiplier: float = 1
    epochs: int = 5
    learning_rate: float = 2e-5

    def __post_init__(self) -> None:
        if self.batch_size_multiplier <= 0:
            raise ValueError("batch_size_multiplier must be positive")
        if self.epochs <= 0:
            raise ValueError("epochs must be a positive integer")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")

    def to_dict(self) -> dict[str, Any]:
        return {
            "base_model": self.base_model,
            "batch_size_multiplier": self.batch_size_multiplier,
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
        }


@dataclass(frozen=True)
class FinetuneJob:
    job_id: str
    config: FinetuneConfig
    dataset_digest: str
    status: str = "pending"
    result: ModelEndpoint | None = None
    message: str | None = None

    def __post_init__(self) -> None:
        if self.status not in JOB_STATUSES:
            raise ValueError(f"unknown job status {self.status!r}")

    @property
    def terminal(self) -> bool:
        return self.status in ("succeeded", "failed")

    def advanced_to(self, status: str, result: ModelEndpoint | None = None, message: str | None = None) -> "FinetuneJob":
        """Job with updated status; transitions only move forward."""
        if _STATUS_RANK[status] < _STATUS_RANK[self.status]:
            raise ValueError(f"job '{self.job_id}' cannot move {self.status} -> {status}")
        return replace(self, status=status, result=result or self.result, message=message or self.message)


def validate_finetune_file(path: Path) -> int:
    """Check every record has exactly the system/user/assistant message shape;
    returns the record count. Runs before any upload because providers fail
    late and expensively."""
    rows = read_jsonl(path)
    if not rows:
        raise SchemaError(f"{path} contains no records")
    for line_no, row in enumerate(rows, start=1):
        messages = row.get("messages")
        if not isinstance(messages, list):
            raise SchemaError(f"record {line_no}: no 'messages' list")
        roles = [m.get("role") for m in messages if isinstance(m, dict)]
        if len(roles) != len(messages) or tuple(roles) != MESSAGE_ROLES:
            raise SchemaError(
                f"record {line_no}: expected roles {list(MESSAGE_ROLES)}, got {roles}"
            )
        for m in messages:
            if not isinstance(m.get("content"), str):
                raise SchemaError(f"record {line_no}: message content must be a string")
    return len(rows)


class FinetuneProvider(Protocol):
    def create_job(self, dataset_path: Path, config: FinetuneConfig, dataset_digest: str) -> FinetuneJob: ...
    def job_status(self, job: FinetuneJob) -> FinetuneJob: ...


def submit(provider: FinetuneProvider, dataset_path: Path, config: FinetuneConfig) -> FinetuneJob:
    """Validate, digest, and hand the dataset to the provider. The digest on
    the returned job equals the digest of the file exactly as emitted."""
    validate_finetune_file(dataset_path)
    digest = sha256_file(dataset_path)
    job = provider.create_job(dataset_path, config, digest)
    logger.info("fine-tune job '%s' created (dataset %s)", job.job_id, digest[:12])
    return job


def poll(provider: FinetuneProvider, job: FinetuneJob) -> FinetuneJob:
    updated = provider.job_status(job)
    if _STATUS_RANK[updated.status] < _STATUS_RANK[job.status]:
        raise ProviderError(500, f"provider reported status regression {job.status} -> {updated.status}")
    return updated


def await_completion(
    provider: FinetuneProvider,
    job: FinetuneJob,
    interval_s: float = 5.0,
    deadline_s: float = 3600.0,
    sleep: Callable[[float], None] = time.sleep,
    clock: Callable[[], float] = time.monotonic,
) -> FinetuneJob:
    """Poll until the job reaches a terminal status or the deadline passes."""
    start = clock()
    current = job
    while True:
        current = poll(provider, current)
        if current.terminal:
            return current
        if clock() - start >= deadline_s:
            raise DeadlineExceeded(
                f"job '{current.job_id}' still '{current.status}' after {deadline_s}s"
            )
        sleep(interval_s)


class MockFinetuneProvider:
    """Schedule-driven provider: each submission walks a fixed status
    timeline, one step per poll. The schedule file maps the configured base
    model to a timeline and optional result/failure details."""

    def __init__(self, schedules: dict[str, dict[str, Any]]):
        self._schedules = dict(schedules)
        self._cursor: dict[str, int] = {}
        self._timelines: dict[str, dict[str, Any]] = {}
        self._count = 0

    @classmethod
    def from_file(cls, path: Path) -> "MockFinetuneProvider":
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))

    def create_job(self, dataset_path: Path, config: FinetuneConfig, dataset_digest: str) -> FinetuneJob:
        schedule = self._schedules.get(config.base_model)
        if schedule is None:
            raise ProviderError(400, f"unknown base model '{config.base_model}'")
        self._count += 1
        job_id = f"mock-ft-{self._count}"
        self._cursor[job_id] = 0
        self._timelines[job_id] = schedule
        return FinetuneJob(job_id=job_id, config=config, dataset_digest=dataset_digest)

    def job_status(self, job: FinetuneJob) -> FinetuneJob:
        if job.job_id not in self._timelines:
            raise ProviderError(404, f"no such job '{job.job_id}'")
        schedule = self._timelines[job.job_id]
        timeline = schedule["timeline"]
        step = min(self._cursor[job.job_id], len(timeline) - 1)
        self._cursor[job.job_id] += 1
        status = timeline[step]
        result = None
        message = None
        if status == "succeeded":
            spec = schedule.get("result") or {}
            result = ModelEndpoint(
                model=spec.get("model", f"{job.config.base_model}-distilled"),
                base_url=spec.get("base_url", "http://mock"),
                api_key_env=spec.get("api_key_env"),
                price_per_1k_input=spec.get("price_per_1k_input", 0.0),
                price_per_1k_output=spec.get("price_per_1k_output", 0.0),
            )
        elif status == "failed":
            message = schedule.get("message", "training failed")
        return job.advanced_to(status, result=result, message=message)


class HttpFinetuneProvider:
    """Generic JSON job API: POST <base>/jobs multipart with the dataset,
    GET <base>/jobs/{id} for status."""

    def __init__(
        self,
        base_url: str,
        api_key_env: str | None = None,
        session: Any | None = None,
        timeout_s: float = 120.0,
    ):
        self._base_url = base_url.rstrip("/")
        self._api_key_env = api_key_env
        self._session = session if session is not None else requests.Session()
        self._timeout_s = timeout_s

    def _headers(self) -> dict[str, str]:
        headers: dict[str, str] = {}
        if self._api_key_env:
            import os

            key = os.environ.get(self._api_key_env)
            if key is None:
                raise ProviderError(401, f"environment variable '{self._api_key_env}' is not set")
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def create_job(self, dataset_path: Path, config: FinetuneConfig, dataset_digest: str) -> FinetuneJob:
        with dataset_path.open("rb") as fh:
            response = self._session.post(
                f"{self._base_url}/jobs",
                data={"config": json.dumps(config.to_dict()), "dataset_digest": dataset_digest},
                files={"dataset": fh},
                headers=self._headers(),
                timeout=self._timeout_s,
            )
        if not 200 <= response.status_code < 300:
            raise ProviderError(response.status_code, response.text)
        body = response.json()
        return FinetuneJob(
            job_id=str(body["job_id"]),
            config=config,
            dataset_digest=dataset_digest,
            status=body.get("status", "pending"),
        )

    def job_status(self, job: FinetuneJob) -> FinetuneJob:
        response = self._session.get(
            f"{self._base_url}/jobs/{job.job_id}", headers=self._headers(), timeout=self._timeout_s
        )
        if not 200 <= response.status_code < 300:
            raise ProviderError(response.status_code, response.text)
        body = response.json()
        result = None
        if body.get("result_model"):
            result = ModelEndpoint(
                model=body["result_model"],
                base_url=body.get("result_base_url", self._base_url),
                api_key_env=self._api_key_env,
            )
        return job.advanced_to(body["status"], result=result, message=body.get("message"))
