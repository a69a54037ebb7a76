"""Fine-tune client: config defaults, schema gate, job lifecycle, mock provider."""

from __future__ import annotations

import json

import pytest

from distillpipe.finetune import (
    DeadlineExceeded,
    FinetuneConfig,
    FinetuneJob,
    MockFinetuneProvider,
    SchemaError,
    await_completion,
    poll,
    submit,
    validate_finetune_file,
)
from distillpipe.gateway import ProviderError
from distillpipe.core import sha256_file


def good_record(label="entailment"):
    return {
        "messages": [
            {"role": "system", "content": "You are a helpful assistant."},
            {"role": "user", "content": "Premise: P\nHypothesis: H"},
            {"role": "assistant", "content": label},
        ]
    }


def write_dataset(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
    return path


@pytest.fixture
def dataset(tmp_path):
    return write_dataset(tmp_path / "train.jsonl", [good_record(), good_record("neutral")])


def provider_for(timeline, result=None, message=None, base_model="llama-8b"):
    schedule = {"timeline": timeline}
    if result:
        schedule["result"] = result
    if message:
        schedule["message"] = message
    return MockFinetuneProvider({base_model: schedule})


class TestFinetuneConfig:
    def test_training_defaults(self):
        config = FinetuneConfig(base_model="llama-8b")
        assert config.batch_size_multiplier == 1
        assert config.epochs == 5
        assert config.learning_rate == 2e-5

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"batch_size_multiplier": 0},
            {"epochs": 0},
            {"epochs": -1},
            {"learning_rate": 0.0},
        ],
    )
    def test_positivity_validation(self, kwargs):
        with pytest.raises(ValueError):
            FinetuneConfig(base_model="m", **kwargs)

    def test_to_dict_round_trips_the_knobs(self):
        config = FinetuneConfig(base_model="m", epochs=3)
        assert config.to_dict() == {
            "base_model": "m",
            "batch_size_multiplier": 1,
            "epochs": 3,
            "learning_rate": 2e-5,
        }


class TestValidateFinetuneFile:
    def test_counts_good_records(self, dataset):
        assert validate_finetune_file(dataset) == 2

    def test_missing_assistant_turn_rejected_before_upload(self, tmp_path):
        record = {"messages": good_record()["messages"][:2]}
        path = write_dataset(tmp_path / "bad.jsonl", [record])
        with pytest.raises(SchemaError, match="record 1"):
            validate_finetune_file(path)

    def test_wrong_role_order_rejected(self, tmp_path):
        record = {"messages": list(reversed(good_record()["messages"]))}
        path = write_dataset(tmp_path / "bad.jsonl", [record])
        with pytest.raises(SchemaError):
            validate_finetune_file(path)

    def test_non_string_content_rejected(self, tmp_path):
        record = good_record()
        record["messages"][2]["content"] = 7
        path = write_dataset(tmp_path / "bad.jsonl", [record])
        with pytest.raises(SchemaError):
            validate_finetune_file(path)

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        with pytest.raises(SchemaError):
            validate_finetune_file(path)


class TestSubmit:
    def test_submit_records_exact_file_digest(self, dataset):
        provider = provider_for(["running", "succeeded"])
        job = submit(provider, dataset, FinetuneConfig(base_model="llama-8b"))
        assert job.status == "pending"
        assert job.dataset_digest == sha256_file(dataset)

    def test_submit_rejects_bad_schema_without_touching_provider(self, tmp_path):
        path = write_dataset(tmp_path / "bad.jsonl", [{"messages": []}])
        provider = provider_for(["succeeded"])
        with pytest.raises(SchemaError):
            submit(provider, path, FinetuneConfig(base_model="llama-8b"))
        assert provider._count == 0

    def test_unknown_base_model_is_provider_error(self, dataset):
        provider = provider_for(["succeeded"])
        with pytest.raises(ProviderError) as err:
            submit(provider, dataset, FinetuneConfig(base_model="mystery"))
        assert err.value.status == 400


class TestLifecycle:
    def test_pending_running_succeeded(self, dataset):
        provider = provider_for(
            ["pending", "running", "succeeded"],
            result={"model": "llama-8b-distilled", "base_url": "http://serve.example"},
        )
        job = submit(provider, dataset, FinetuneConfig(base_model="llama-8b"))
        observed = [job.status]
        while not job.terminal:
            job = poll(provider, job)
            observed.append(job.status)
        assert observed == ["pending", "pending", "running", "succeeded"]
        assert job.result.model == "llama-8b-distilled"
        assert job.result.base_url == "http://serve.example"

    def test_await_completion_returns_terminal_job(self, dataset):
        provider = provider_for(["pending", "running", "succeeded"])
        job = submit(provider, dataset, FinetuneConfig(base_model="llama-8b"))
        sleeps = []
        done = await_completion(
            provider, job, interval_s=2.0, deadline_s=100.0,
            sleep=sleeps.append, clock=lambda: 0.0,
        )
        assert done.status == "succeeded"
        assert sleeps == [2.0, 2.0]

    def test_failed_job_keeps_provider_message(self, dataset):
        provider = provider_for(["running", "failed"], message="loss diverged")
        job = submit(provider, dataset, FinetuneConfig(base_model="llama-8b"))
        done = await_completion(provider, job, sleep=lambda _: None, clock=lambda: 0.0)
        assert done.status == "failed"
        assert done.terminal
        assert done.message == "loss diverged"
        assert done.result is None

    def test_stuck_job_hits_deadline(self, dataset):
        provider = provider_for(["pending"])
        job = submit(provider, dataset, FinetuneConfig(base_model="llama-8b"))
        ticks = iter(range(100))
        with pytest.raises(DeadlineExceeded):
            await_completion(
                provider, job, interval_s=1.0, deadline_s=3.0,
                sleep=lambda _: None, clock=lambda: float(next(ticks)),
            )

    def test_statuses_never_regress(self, dataset):
        class Regressing:
            def __init__(self, inner):
                self.inner = inner

            def create_job(self, *args):
                return self.inner.create_job(*args)

            def job_status(self, job):
                return FinetuneJob(
                    job_id=job.job_id,
                    config=job.config,
                    dataset_digest=job.dataset_digest,
                    status="pending",
                )

        provider = provider_for(["running"])
        job = submit(provider, dataset, FinetuneConfig(base_model="llama-8b"))
        job = poll(provider, job)
        assert job.status == "running"
        with pytest.raises(ProviderError):
            poll(Regressing(provider), job)

    def test_terminal_status_sticks_after_timeline_end(self, dataset):
        provider = provider_for(["succeeded"])
        job = submit(provider, dataset, FinetuneConfig(base_model="llama-8b"))
        job = poll(provider, job)
        assert job.status == "succeeded"
        again = poll(provider, job)
        assert again.status == "succeeded"

    def test_job_rejects_unknown_status(self):
        with pytest.raises(ValueError):
            FinetuneJob(job_id="j", config=FinetuneConfig(base_model="m"), dataset_digest="0", status="paused")

    def test_forward_only_transition_guard(self):
        job = FinetuneJob(
            job_id="j", config=FinetuneConfig(base_model="m"), dataset_digest="0", status="running"
        )
        with pytest.raises(ValueError):
            job.advanced_to("pending")


class TestMockScheduleFile:
    def test_from_file(self, tmp_path, dataset):
        schedule_path = tmp_path / "schedule.json"
        schedule_path.write_text(
            json.dumps(
                {
                    "llama-8b": {
                        "timeline": ["running", "succeeded"],
                        "result": {"model": "llama-8b-distilled", "base_url": "http://m"},
                    }
                }
            )
        )
        provider = MockFinetuneProvider.from_file(schedule_path)
        job = submit(provider, dataset, FinetuneConfig(base_model="llama-8b"))
        done = await_completion(provider, job, sleep=lambda _: None, clock=lambda: 0.0)
        assert done.status == "succeeded"
        assert done.result.model == "llama-8b-distilled"

    def test_unknown_job_id_is_404(self, dataset):
        provider = provider_for(["succeeded"])
        ghost = FinetuneJob(
            job_id="mock-ft-999", config=FinetuneConfig(base_model="llama-8b"), dataset_digest="0"
        )
        with pytest.raises(ProviderError) as err:
            provider.job_status(ghost)
        assert err.value.status == 404
