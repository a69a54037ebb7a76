"""Versioned library of task-specific prompt templates and their rendering.

Templates are data, not code: bodies live in text files next to a manifest,
so the built-in set can be extended without touching the package. Rendering
is a single pass over the user text, so substituted sample content is never
re-scanned for placeholders.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

from .core import OPTIONAL_FIELDS, REQUIRED_FIELDS, Sample, TaskKind

STYLES = ("vanilla", "elaborate")
EXPECTED_OUTPUTS = (
    "plain_text",
    "cod_json",
    "cot_json_choice",
    "cot_json_numeric",
    "rating_lines",
    "difficulty_score",
)
JUDGE_OUTPUTS = ("rating_lines", "difficulty_score")

# Chat history serialization. The transcript markers follow the Baize
# dataset convention and can be overridden per render call.
HUMAN_MARKER = "[|Human|]"
AI_MARKER = "[|AI|]"

_PLACEHOLDER = re.compile(r"\{([a-z_]+)\}")


class MissingFieldError(KeyError):
    def __init__(self, placeholder: str, sample_id: str):
        self.placeholder = placeholder
        self.sample_id = sample_id
        super().__init__(f"sample '{sample_id}' lacks field '{placeholder}'")


class DuplicateTemplateError(ValueError):
    pass


class UnknownTemplateError(KeyError):
    pass


@dataclass(frozen=True)
class PromptTemplate:
    id: str
    task: TaskKind
    style: str
    system_text: str
    user_text: str
    expected_output: str
    max_new_tokens: int
    version: int = 1

    def __post_init__(self) -> None:
        if self.style not in STYLES:
            raise ValueError(f"style must be one of {STYLES}, got {self.style!r}")
        if self.expected_output not in EXPECTED_OUTPUTS:
            raise ValueError(f"unknown expected_output {self.expected_output!r}")
        if self.max_new_tokens <= 0:
            raise ValueError("max_new_tokens must be positive")
        if _PLACEHOLDER.search(self.system_text):
            raise ValueError(f"template '{self.id}': system text must not contain placeholders")
        allowed = set(REQUIRED_FIELDS[self.task]) | set(OPTIONAL_FIELDS[self.task])
        bad = set(self.placeholders()) - allowed
        if bad:
            raise ValueError(
                f"template '{self.id}': placeholders {sorted(bad)} are not fields of task '{self.task.value}'"
            )

    def placeholders(self) -> tuple[str, ...]:
        return tuple(dict.fromkeys(_PLACEHOLDER.findall(self.user_text)))


@dataclass(frozen=True)
class PromptInstance:
    template_id: str
    template_version: int
    system: str
    user: str

    def messages(self) -> list[dict[str, str]]:
        msgs = []
        if self.system:
            msgs.append({"role": "system", "content": self.system})
        msgs.append({"role": "user", "content": self.user})
        return msgs


def render_chat_history(turns, human_marker: str = HUMAN_MARKER, ai_marker: str = AI_MARKER) -> str:
    """Serialize alternating turns; each turn gets its own line, empty history renders empty."""
    lines = []
    for turn in turns:
        marker = human_marker if turn["role"] == "human" else ai_marker
        lines.append(f"{marker} {turn['content']}")
    return "".join(line + "\n" for line in lines)


def format_answer_choices(choices) -> str:
    letters = "ABCDE"
    if len(choices) > len(letters):
        raise ValueError(f"at most {len(letters)} answer choices supported, got {len(choices)}")
    return "\n".join(f"({letters[i]}) {text}" for i, text in enumerate(choices))


def _field_text(sample: Sample, name: str) -> str:
    value = sample.input_fields[name]
    if name == "answer_choices":
        return format_answer_choices(value)
    if name == "chat_history":
        return render_chat_history(value)
    return str(value)


def render(template: PromptTemplate, sample: Sample) -> PromptInstance:
    """Instantiate a template against a sample. Total: a missing field raises
    before any network call; substitution is verbatim and deterministic."""
    out = []
    pos = 0
    for match in _PLACEHOLDER.finditer(template.user_text):
        name = match.group(1)
        if name not in sample.input_fields:
            raise MissingFieldError(name, sample.id)
        out.append(template.user_text[pos : match.start()])
        out.append(_field_text(sample, name))
        pos = match.end()
    out.append(template.user_text[pos:])
    return PromptInstance(
        template_id=template.id,
        template_version=template.version,
        system=template.system_text,
        user="".join(out),
    )


class PromptLibrary:
    """Append-only registry of templates, ordered by registration.

    Registration order defines the variant order used for deterministic
    tie-breaking during template selection.
    """

    def __init__(self) -> None:
        self._templates: list[PromptTemplate] = []
        self._by_id: dict[str, int] = {}

    def register(self, template: PromptTemplate) -> "PromptLibrary":
        if template.id in self._by_id:
            raise DuplicateTemplateError(f"template id '{template.id}' already registered")
        self._templates.append(template)
        self._by_id[template.id] = len(self._templates) - 1
        return self

    def register_version(self, template: PromptTemplate) -> "PromptLibrary":
        """Register a new version of an existing id; lookup by id returns the latest."""
        if template.id not in self._by_id:
            return self.register(template)
        prev = self._templates[self._by_id[template.id]]
        bumped = replace(template, version=prev.version + 1)
        self._templates.append(bumped)
        self._by_id[template.id] = len(self._templates) - 1
        return self

    def get(self, template_id: str) -> PromptTemplate:
        if template_id not in self._by_id:
            raise UnknownTemplateError(f"no template with id '{template_id}'")
        return self._templates[self._by_id[template_id]]

    def lookup(self, task: TaskKind, style: str) -> PromptTemplate:
        """First registered template for (task, style), skipping judge templates."""
        for t in self._templates:
            if t.task is task and t.style == style and t.expected_output not in JUDGE_OUTPUTS:
                return t
        raise UnknownTemplateError(f"no template for ({task.value}, {style})")

    def variants(self, task: TaskKind) -> list[PromptTemplate]:
        """Elaborate generation variants for a task, in registration order."""
        return [
            t
            for t in self._templates
            if t.task is task and t.style == "elaborate" and t.expected_output not in JUDGE_OUTPUTS
        ]

    def all(self) -> list[PromptTemplate]:
        return list(self._templates)

    def __contains__(self, template_id: str) -> bool:
        return template_id in self._by_id


def load_library(manifest_path: Path) -> PromptLibrary:
    """Load a library from an on-disk manifest plus body files (all verbatim)."""
    entries = json.loads(manifest_path.read_text(encoding="utf-8"))
    base = manifest_path.parent
    library = PromptLibrary()
    for entry in entries:
        system_text = ""
        if entry.get("system_file"):
            system_text = (base / entry["system_file"]).read_text(encoding="utf-8").rstrip("\n")
        user_text = (base / entry["user_file"]).read_text(encoding="utf-8").rstrip("\n")
        library.register(
            PromptTemplate(
                id=entry["id"],
                task=TaskKind(entry["task"]),
                style=entry["style"],
                system_text=system_text,
                user_text=user_text,
                expected_output=entry["expected_output"],
                max_new_tokens=int(entry["max_new_tokens"]),
            )
        )
    return library


def builtin_library() -> PromptLibrary:
    """The shipped template set: per-task vanilla and elaborate generation
    prompts plus the two judge prompts."""
    with resources.as_file(resources.files("distillpipe") / "templates" / "manifest.json") as path:
        return load_library(path)
