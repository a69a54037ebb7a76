"""Shared domain types: tasks, samples, labels, datasets, and run manifests.

Everything here is immutable after construction and safe to share across
pipeline stages. Datasets are stored as JSON Lines, one sample per line,
with splits in sibling files ``<name>.<split>.jsonl``.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping


class TaskKind(str, Enum):
    SUMMARIZATION = "summarization"
    CONVERSATION = "conversation"
    NLI = "nli"
    MATH = "math"
    QA = "qa"


class LabelKind(str, Enum):
    CHOICE_LETTER = "choice_letter"
    NLI_CLASS = "nli_class"
    INTEGER = "integer"
    FREE_TEXT = "free_text"


NLI_CLASSES = ("entailment", "contradiction", "neutral")
CHOICE_LETTERS = ("A", "B", "C", "D", "E")

# Fields a sample must carry, per task. Optional fields may appear in
# prompt templates (e.g. judge templates take "response" / "answer").
REQUIRED_FIELDS: dict[TaskKind, tuple[str, ...]] = {
    TaskKind.SUMMARIZATION: ("article",),
    TaskKind.CONVERSATION: ("chat_history", "query"),
    TaskKind.NLI: ("premise", "hypothesis"),
    TaskKind.MATH: ("question",),
    TaskKind.QA: ("question", "answer_choices"),
}

OPTIONAL_FIELDS: dict[TaskKind, tuple[str, ...]] = {
    TaskKind.SUMMARIZATION: (),
    TaskKind.CONVERSATION: ("response",),
    TaskKind.NLI: (),
    TaskKind.MATH: ("answer_choices", "answer"),
    TaskKind.QA: (),
}

SPLIT_NAMES = ("train", "eval", "test")


class NormalizationError(ValueError):
    """Raw text cannot be coerced to the expected label kind."""


@dataclass(frozen=True)
class Label:
    kind: LabelKind
    value: str | int

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind.value, "value": self.value}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Label":
        return cls(kind=LabelKind(d["kind"]), value=d["value"])


@dataclass(frozen=True)
class Sample:
    """One task instance: named input fields plus optional gold/synthetic labels.

    ``input_fields`` values are strings, except ``answer_choices`` (list of
    choice texts) and ``chat_history`` (list of ``{"role", "content"}`` turns,
    role one of ``human``/``ai``).
    """

    id: str
    input_fields: Mapping[str, Any]
    gold_label: Label | None = None
    synthetic_label: Label | None = None

    def with_synthetic_label(self, label: Label) -> "Sample":
        return replace(self, synthetic_label=label)

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"id": self.id, "input_fields": dict(self.input_fields)}
        if self.gold_label is not None:
            d["gold_label"] = self.gold_label.to_dict()
        if self.synthetic_label is not None:
            d["synthetic_label"] = self.synthetic_label.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Sample":
        allowed = {"id", "input_fields", "gold_label", "synthetic_label"}
        unknown = set(d) - allowed
        if unknown:
            raise ValueError(f"unknown sample keys: {sorted(unknown)}")
        return cls(
            id=str(d["id"]),
            input_fields=dict(d["input_fields"]),
            gold_label=Label.from_dict(d["gold_label"]) if d.get("gold_label") else None,
            synthetic_label=Label.from_dict(d["synthetic_label"]) if d.get("synthetic_label") else None,
        )


@dataclass(frozen=True)
class Dataset:
    name: str
    task: TaskKind
    splits: Mapping[str, tuple[Sample, ...]]

    def __post_init__(self) -> None:
        bad = set(self.splits) - set(SPLIT_NAMES)
        if bad:
            raise ValueError(f"split names must be from {SPLIT_NAMES}, got {sorted(bad)}")
        object.__setattr__(self, "splits", {k: tuple(v) for k, v in self.splits.items()})

    def split(self, name: str) -> tuple[Sample, ...]:
        return self.splits.get(name, ())


@dataclass(frozen=True)
class Violation:
    sample_id: str
    rule: str
    detail: str = ""


def validate_dataset(dataset: Dataset) -> list[Violation]:
    """Check every sample against the task's schema. Violations are data, not errors."""
    required = REQUIRED_FIELDS[dataset.task]
    violations: list[Violation] = []
    for split_name, samples in dataset.splits.items():
        seen: set[str] = set()
        for sample in samples:
            if sample.id in seen:
                violations.append(
                    Violation(sample.id, "duplicate_id", f"duplicate id in split '{split_name}'")
                )
            seen.add(sample.id)
            for fname in required:
                if fname not in sample.input_fields:
                    violations.append(
                        Violation(sample.id, "missing_field", f"required field '{fname}' absent")
                    )
            choices = sample.input_fields.get("answer_choices")
            if choices is not None and not isinstance(choices, list):
                violations.append(
                    Violation(sample.id, "bad_field_type", "'answer_choices' must be a list")
                )
            history = sample.input_fields.get("chat_history")
            if history is not None:
                if not isinstance(history, list) or not all(
                    isinstance(t, dict) and {"role", "content"} <= set(t) for t in history
                ):
                    violations.append(
                        Violation(
                            sample.id,
                            "bad_field_type",
                            "'chat_history' must be a list of {role, content} turns",
                        )
                    )
            for label in (sample.gold_label, sample.synthetic_label):
                if label is not None:
                    problem = _label_problem(label)
                    if problem:
                        violations.append(Violation(sample.id, "bad_label", problem))
    return violations


def _label_problem(label: Label) -> str | None:
    if label.kind is LabelKind.CHOICE_LETTER and label.value not in CHOICE_LETTERS:
        return f"choice letter {label.value!r} not in A-E"
    if label.kind is LabelKind.NLI_CLASS and label.value not in NLI_CLASSES:
        return f"nli class {label.value!r} not in {NLI_CLASSES}"
    if label.kind is LabelKind.INTEGER and not isinstance(label.value, int):
        return f"integer label holds non-int {label.value!r}"
    if label.kind is LabelKind.FREE_TEXT and not (isinstance(label.value, str) and label.value.strip()):
        return "free text label is empty"
    return None


_INT_PATTERN = re.compile(r"^[+-]?(\d+|\d{1,3}(,\d{3})+)$")


def normalize_label(raw: str | int, expected_kind: LabelKind) -> Label:
    """Coerce raw model output to a canonical label of the expected kind.

    Raises NormalizationError when the text cannot be coerced; callers treat
    that as an unusable generation, never as a silent default.
    """
    text = str(raw).strip()
    if not text:
        raise NormalizationError(f"empty text for {expected_kind.value}")

    if expected_kind is LabelKind.CHOICE_LETTER:
        stripped = text.strip(" \t\n()[].'\"`")
        upper = stripped.upper()
        if upper not in CHOICE_LETTERS:
            raise NormalizationError(f"{raw!r} is not a choice letter A-E")
        return Label(LabelKind.CHOICE_LETTER, upper)

    if expected_kind is LabelKind.NLI_CLASS:
        lowered = text.lower()
        if lowered not in NLI_CLASSES:
            raise NormalizationError(f"{raw!r} is not one of {NLI_CLASSES}")
        return Label(LabelKind.NLI_CLASS, lowered)

    if expected_kind is LabelKind.INTEGER:
        candidate = text[:-1] if text.endswith(".") else text
        candidate = candidate.strip()
        if not _INT_PATTERN.match(candidate):
            raise NormalizationError(f"{raw!r} is not a plain integer")
        return Label(LabelKind.INTEGER, int(candidate.replace(",", "")))

    return Label(LabelKind.FREE_TEXT, text)


# --- JSONL dataset files -------------------------------------------------

def write_jsonl(rows: Iterable[dict], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def read_jsonl(path: Path) -> list[dict]:
    rows = []
    with path.open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


def write_split(samples: tuple[Sample, ...] | list[Sample], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for sample in samples:
            fh.write(json.dumps(sample.to_dict(), ensure_ascii=False) + "\n")


def read_split(path: Path) -> tuple[Sample, ...]:
    samples = []
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                samples.append(Sample.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise ValueError(f"bad sample at {path}:{line_no}: {exc}") from exc
    return tuple(samples)


def write_dataset(dataset: Dataset, directory: Path) -> dict[str, Path]:
    """Write each split to ``<name>.<split>.jsonl`` under *directory*."""
    paths = {}
    for split_name, samples in dataset.splits.items():
        path = directory / f"{dataset.name}.{split_name}.jsonl"
        write_split(samples, path)
        paths[split_name] = path
    return paths


def read_dataset(name: str, task: TaskKind, directory: Path) -> Dataset:
    splits: dict[str, tuple[Sample, ...]] = {}
    for split_name in SPLIT_NAMES:
        path = directory / f"{name}.{split_name}.jsonl"
        if path.exists():
            splits[split_name] = read_split(path)
    if not splits:
        raise FileNotFoundError(f"no split files found for dataset '{name}' in {directory}")
    return Dataset(name=name, task=task, splits=splits)


# --- Digests and run manifests -------------------------------------------

def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: Path) -> str:
    return sha256_bytes(path.read_bytes())


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def digest_of(obj: Any) -> str:
    return sha256_bytes(canonical_json(obj).encode("utf-8"))


def dataset_digests(dataset: Dataset) -> dict[str, str]:
    return {
        split: digest_of([s.to_dict() for s in samples])
        for split, samples in dataset.splits.items()
    }


@dataclass
class RunManifest:
    """Reproducibility record for one pipeline run.

    Content hashes cover resolved config and artifacts; timestamps live in
    unhashed bookkeeping fields so reruns with identical inputs yield
    byte-identical artifacts.
    """

    run_id: str
    config_digest: str
    dataset_digests: dict[str, str] = field(default_factory=dict)
    templates: dict[str, Any] = field(default_factory=dict)
    generation_config: dict[str, Any] = field(default_factory=dict)
    artifacts: dict[str, dict[str, str]] = field(default_factory=dict)
    stages: dict[str, dict[str, Any]] = field(default_factory=dict)
    created_at: str = ""

    @classmethod
    def for_config(cls, config_digest: str) -> "RunManifest":
        return cls(run_id=f"run-{config_digest[:12]}", config_digest=config_digest)

    def record_artifact(self, name: str, path: Path) -> str:
        digest = sha256_file(path)
        self.artifacts[name] = {"path": str(path), "sha256": digest}
        return digest

    def record_stage(
        self, name: str, key: str, status: str = "complete", details: dict[str, Any] | None = None
    ) -> None:
        entry: dict[str, Any] = {"key": key, "status": status}
        if details:
            entry["details"] = details
        self.stages[name] = entry

    def stage_details(self, name: str) -> dict[str, Any]:
        entry = self.stages.get(name) or {}
        return entry.get("details") or {}

    def stage_key(self, name: str) -> str | None:
        entry = self.stages.get(name)
        if entry and entry.get("status") == "complete":
            return entry.get("key")
        return None

    def to_dict(self) -> dict[str, Any]:
        return {
            "run_id": self.run_id,
            "config_digest": self.config_digest,
            "dataset_digests": self.dataset_digests,
            "templates": self.templates,
            "generation_config": self.generation_config,
            "artifacts": self.artifacts,
            "stages": self.stages,
            "created_at": self.created_at,
        }

    def save(self, path: Path) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: Path) -> "RunManifest":
        d = json.loads(path.read_text(encoding="utf-8"))
        return cls(**d)
