"""Shared fixtures: tiny datasets, fixture-driven mock backends, endpoints."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from distillpipe.core import Label, LabelKind, Sample
from distillpipe.gateway import GenerationConfig, MockBackend, ModelEndpoint, matcher_digest
from distillpipe.prompts import builtin_library, render


@pytest.fixture(scope="session")
def library():
    return builtin_library()


@pytest.fixture
def teacher():
    return ModelEndpoint(model="teacher-405b", base_url="http://mock")


@pytest.fixture
def judge():
    return ModelEndpoint(model="judge", base_url="http://mock")


def nli_sample(i: int, gold: str = "entailment") -> Sample:
    return Sample(
        id=f"nli-{i}",
        input_fields={"premise": f"Premise number {i}.", "hypothesis": f"Hypothesis number {i}."},
        gold_label=Label(LabelKind.NLI_CLASS, gold),
    )


def cot_completion(answer: str, reason: str = "step by step") -> str:
    return json.dumps({"reason": reason, "answer_choice": answer})


def backend_for(template, samples, completions, config: GenerationConfig) -> MockBackend:
    """Mock backend answering each sample's rendered prompt with the paired completion."""
    backend = MockBackend({})
    for sample, completion in zip(samples, completions):
        instance = render(template, sample)
        backend.add(instance.messages(), config, completion, input_tokens=100, output_tokens=20)
    return backend


def write_fixture_file(path: Path, template, samples, completions, config: GenerationConfig):
    rows = []
    for sample, completion in zip(samples, completions):
        instance = render(template, sample)
        rows.append(
            {
                "matcher_digest": matcher_digest(instance.messages(), config),
                "completion": completion,
                "input_tokens": 100,
                "output_tokens": 20,
            }
        )
    with Path(path).open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
    return path
