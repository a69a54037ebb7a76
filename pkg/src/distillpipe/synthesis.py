"""Teacher-side synthesis pipeline.

Covers the five distillation stages: pick a generation config and an
elaborate template by evaluation-set score, run the teacher over a split,
substitute synthetic labels into the training set, and emit the student
fine-tuning file rendered with the short vanilla prompt. The emitted file
contains labels only — reasoning chains and elaborate prompt text never
reach the student.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

from .core import (
    Dataset,
    Label,
    LabelKind,
    NormalizationError,
    Sample,
    TaskKind,
    normalize_label,
    sha256_file,
    write_jsonl,
)
from .gateway import (
    Backend,
    GenerationConfig,
    GenerationRecord,
    ModelEndpoint,
    generate_batch,
)
from .metrics import accuracy, entity_density, hhh_mt
from .parsers import ParseError, parse_cod, parse_cot
from .prompts import PromptLibrary, PromptTemplate, render

logger = logging.getLogger(__name__)

METRIC_IDS = ("entity_density", "accuracy", "hhh_mt_mean")

DEFAULT_COD_STEP = 4
DEFAULT_RETRY_BUDGET = 1
DEFAULT_DISQUALIFY_THRESHOLD = 0.5


class EmptyGridError(ValueError):
    pass


class NoQualifiedCandidateError(RuntimeError):
    """Every candidate exceeded the unparseable-output threshold."""


class AlignmentError(ValueError):
    pass


class MissingLabelError(ValueError):
    pass


@dataclass(frozen=True)
class MetricSpec:
    metric: str
    direction: str = "maximize"
    judge: ModelEndpoint | None = None

    def __post_init__(self) -> None:
        if self.metric not in METRIC_IDS:
            raise ValueError(f"metric must be one of {METRIC_IDS}, got {self.metric!r}")
        if self.direction != "maximize":
            raise ValueError("all supported metrics are maximized")
        if self.metric == "hhh_mt_mean" and self.judge is None:
            raise ValueError("hhh_mt_mean needs a judge endpoint")


@dataclass(frozen=True)
class CandidateGrid:
    configs: tuple[GenerationConfig, ...] = ()
    template_ids: tuple[str, ...] = ()


def default_grid(max_new_tokens: int = 1024) -> CandidateGrid:
    """Single-element grid holding the fixed generation config (greedy,
    full nucleus): selection over it is a no-op unless the user widens it."""
    return CandidateGrid(configs=(GenerationConfig(max_new_tokens=max_new_tokens),))


@dataclass(frozen=True)
class SynthResult:
    sample: Sample
    record: GenerationRecord
    label: Label | None = None
    error: ParseError | None = None

    @property
    def ok(self) -> bool:
        return self.label is not None


def label_kind_for(template: PromptTemplate, task: TaskKind, sample: Sample) -> LabelKind:
    """Which label kind a template's output normalizes to for this sample."""
    out = template.expected_output
    if out == "cod_json":
        return LabelKind.FREE_TEXT
    if out == "cot_json_numeric":
        return LabelKind.INTEGER
    if out == "cot_json_choice":
        return LabelKind.NLI_CLASS if task is TaskKind.NLI else LabelKind.CHOICE_LETTER
    if out == "plain_text":
        if task in (TaskKind.SUMMARIZATION, TaskKind.CONVERSATION):
            return LabelKind.FREE_TEXT
        if task is TaskKind.NLI:
            return LabelKind.NLI_CLASS
        if task is TaskKind.QA:
            return LabelKind.CHOICE_LETTER
        if "answer_choices" in sample.input_fields:
            return LabelKind.CHOICE_LETTER
        return LabelKind.INTEGER
    raise ValueError(f"template '{template.id}' ({out}) is not a generation template")


def parse_synthetic_output(
    raw: str,
    template: PromptTemplate,
    task: TaskKind,
    sample: Sample,
    cod_step: int = DEFAULT_COD_STEP,
) -> Label:
    """Raw completion -> normalized Label, or ParseError. Normalization
    failures surface as ParseError so callers have one failure channel."""
    kind = label_kind_for(template, task, sample)
    out = template.expected_output
    try:
        if out == "cod_json":
            return Label(LabelKind.FREE_TEXT, parse_cod(raw).summary_at(cod_step))
        if out in ("cot_json_choice", "cot_json_numeric"):
            key = "answer_choice" if out == "cot_json_choice" else "answer"
            return normalize_label(parse_cot(raw, key).label_raw, kind)
        return normalize_label(raw, kind)
    except NormalizationError as exc:
        raise ParseError("malformed", f"label normalization failed: {exc}", raw) from exc


def generate_synthetic(
    teacher: ModelEndpoint,
    template: PromptTemplate,
    config: GenerationConfig,
    split: Sequence[Sample],
    task: TaskKind,
    backend: Backend,
    parallelism: int = 1,
    cod_step: int = DEFAULT_COD_STEP,
) -> list[SynthResult]:
    """Run the teacher over a split; one result per sample in input order,
    failures carried in-place."""
    instances = [render(template, sample) for sample in split]
    ids = [sample.id for sample in split]
    records = generate_batch(teacher, instances, config, backend, parallelism, sample_ids=ids)
    results: list[SynthResult] = []
    for sample, record in zip(split, records):
        if not record.ok:
            results.append(
                SynthResult(
                    sample,
                    record,
                    error=ParseError("malformed", record.error or "generation failed"),
                )
            )
            continue
        try:
            label = parse_synthetic_output(record.raw_output, template, task, sample, cod_step)
        except ParseError as exc:
            logger.warning("unparseable teacher output for sample '%s': %s", sample.id, exc)
            results.append(SynthResult(sample, record, error=exc))
            continue
        results.append(SynthResult(sample, record, label=label))
    return results


# --- selection over evaluation-set score -----------------------------------

def _score_candidate(
    metric: MetricSpec,
    task: TaskKind,
    results: Sequence[SynthResult],
    backend: Backend,
) -> float | None:
    parsed = [r for r in results if r.ok]
    if not parsed:
        return None
    if metric.metric == "accuracy":
        predictions: dict[str, Label | None] = {r.sample.id: r.label for r in results}
        gold = {r.sample.id: r.sample.gold_label for r in results}
        missing = [sid for sid, label in gold.items() if label is None]
        if missing:
            raise ValueError(f"accuracy selection needs gold labels; missing for {missing[:5]}")
        return accuracy(predictions, gold).mean
    if metric.metric == "entity_density":
        report = entity_density(
            summaries=[str(r.label.value) for r in parsed],
            documents=[str(r.sample.input_fields["article"]) for r in parsed],
            ids=[r.sample.id for r in parsed],
        )
        return report.mean
    transcript = [
        {
            "id": r.sample.id,
            "chat_history": r.sample.input_fields.get("chat_history") or [],
            "query": r.sample.input_fields["query"],
            "response": str(r.label.value),
        }
        for r in parsed
    ]
    return hhh_mt(metric.judge, transcript, backend).mean


def _select(
    candidates: Sequence[Any],
    describe: Callable[[Any], Any],
    run: Callable[[Any], list[SynthResult]],
    metric: MetricSpec,
    task: TaskKind,
    backend: Backend,
    disqualify_threshold: float,
) -> tuple[int, list[dict[str, Any]]]:
    if not candidates:
        raise EmptyGridError("selection needs at least one candidate")
    table: list[dict[str, Any]] = []
    best_index: int | None = None
    best_score: float | None = None
    for position, candidate in enumerate(candidates):
        results = run(candidate)
        unparseable = sum(1 for r in results if not r.ok) / len(results) if results else 1.0
        disqualified = unparseable > disqualify_threshold
        score = None
        if not disqualified:
            score = _score_candidate(metric, task, results, backend)
            disqualified = score is None
        table.append(
            {
                "position": position,
                "candidate": describe(candidate),
                "score": score,
                "unparseable_fraction": unparseable,
                "disqualified": disqualified,
            }
        )
        if not disqualified and (best_score is None or score > best_score):
            best_index, best_score = position, score
    if best_index is None:
        raise NoQualifiedCandidateError(
            f"no candidate stayed under the {disqualify_threshold:.0%} unparseable threshold"
        )
    return best_index, table


def select_hyperparams(
    teacher: ModelEndpoint,
    template: PromptTemplate,
    grid: CandidateGrid,
    d_eval: Sequence[Sample],
    metric: MetricSpec,
    backend: Backend,
    parallelism: int = 1,
    cod_step: int = DEFAULT_COD_STEP,
    disqualify_threshold: float = DEFAULT_DISQUALIFY_THRESHOLD,
) -> tuple[GenerationConfig, list[dict[str, Any]]]:
    """Argmax of the metric over candidate configs; ties break to the
    earliest grid position. The full score table goes into the manifest."""
    if not d_eval:
        raise ValueError("d_eval must be nonempty")
    index, table = _select(
        candidates=grid.configs,
        describe=lambda c: c.to_dict(),
        run=lambda c: generate_synthetic(
            teacher, template, c, d_eval, template.task, backend, parallelism, cod_step
        ),
        metric=metric,
        task=template.task,
        backend=backend,
        disqualify_threshold=disqualify_threshold,
    )
    return grid.configs[index], table


def select_template(
    teacher: ModelEndpoint,
    variants: Sequence[PromptTemplate],
    config: GenerationConfig,
    d_eval: Sequence[Sample],
    metric: MetricSpec,
    backend: Backend,
    parallelism: int = 1,
    cod_step: int = DEFAULT_COD_STEP,
    disqualify_threshold: float = DEFAULT_DISQUALIFY_THRESHOLD,
) -> tuple[PromptTemplate, list[dict[str, Any]]]:
    """Same contract as select_hyperparams with templates as candidates.

    The sampling parameters come from ``config``; each variant keeps its own
    output budget (a dense-summary chain needs far more room than a label).
    """
    if not d_eval:
        raise ValueError("d_eval must be nonempty")
    index, table = _select(
        candidates=list(variants),
        describe=lambda t: t.id,
        run=lambda t: generate_synthetic(
            teacher,
            t,
            replace(config, max_new_tokens=t.max_new_tokens),
            d_eval,
            t.task,
            backend,
            parallelism,
            cod_step,
        ),
        metric=metric,
        task=variants[0].task if variants else TaskKind.SUMMARIZATION,
        backend=backend,
        disqualify_threshold=disqualify_threshold,
    )
    return variants[index], table


# --- training-set substitution ----------------------------------------------

def build_dtrain_prime(
    d_train: Sequence[Sample],
    synth: Sequence[SynthResult],
    retry: Callable[[Sequence[Sample]], list[SynthResult]] | None = None,
    retry_budget: int = DEFAULT_RETRY_BUDGET,
    name: str = "dtrain-prime",
    task: TaskKind | None = None,
) -> tuple[Dataset, dict[str, Any]]:
    """Substitute synthetic labels into the training samples.

    Gold labels are left untouched (evaluation still uses ground truth).
    Samples that stay unparsed after ``retry_budget`` re-generation rounds
    are excluded and reported, never silently defaulted.
    """
    by_id = {}
    for result in synth:
        if result.sample.id in by_id:
            raise AlignmentError(f"synthesis has duplicate result for id '{result.sample.id}'")
        by_id[result.sample.id] = result
    train_ids = {sample.id for sample in d_train}
    missing = [sample.id for sample in d_train if sample.id not in by_id]
    extra = [sid for sid in by_id if sid not in train_ids]
    if missing or extra:
        raise AlignmentError(
            f"synthesis results misaligned with training set "
            f"(missing: {missing[:5]}, extra: {extra[:5]})"
        )

    for round_no in range(1, retry_budget + 1):
        failed = [sample for sample in d_train if not by_id[sample.id].ok]
        if not failed or retry is None:
            break
        logger.info("retry round %d over %d unparsed samples", round_no, len(failed))
        for result in retry(failed):
            if result.sample.id not in train_ids:
                raise AlignmentError(f"retry returned unknown id '{result.sample.id}'")
            by_id[result.sample.id] = result

    kept: list[Sample] = []
    exclusions: dict[str, str] = {}
    for sample in d_train:
        result = by_id[sample.id]
        if result.ok:
            kept.append(sample.with_synthetic_label(result.label))
        else:
            exclusions[sample.id] = str(result.error)
    report = {
        "input_count": len(d_train),
        "kept_count": len(kept),
        "excluded_count": len(exclusions),
        "retry_budget": retry_budget,
        "exclusions": exclusions,
    }
    if task is None:
        task = _infer_task(d_train)
    dataset = Dataset(name=name, task=task, splits={"train": tuple(kept)})
    return dataset, report


def _infer_task(samples: Sequence[Sample]) -> TaskKind:
    fields = set(samples[0].input_fields) if samples else set()
    if "article" in fields:
        return TaskKind.SUMMARIZATION
    if "premise" in fields:
        return TaskKind.NLI
    if "chat_history" in fields:
        return TaskKind.CONVERSATION
    if "answer_choices" in fields:
        return TaskKind.QA
    return TaskKind.MATH


# --- fine-tune file emission --------------------------------------------------

@dataclass(frozen=True)
class FinetuneFile:
    path: Path
    digest: str
    records: int


def finetune_messages(sample: Sample, vanilla: PromptTemplate) -> list[dict[str, str]]:
    if sample.synthetic_label is None:
        raise MissingLabelError(f"sample '{sample.id}' has no synthetic label")
    instance = render(vanilla, sample)
    assistant = str(sample.synthetic_label.value)
    return instance.messages() + [{"role": "assistant", "content": assistant}]


def emit_finetune_dataset(
    dprime: Dataset,
    vanilla: PromptTemplate,
    path: Path,
) -> FinetuneFile:
    """Write the student fine-tuning file: vanilla prompt in, label out.

    The assistant turn is the bare label value — reasoning chains never
    reach the student, which is what lets it answer the short prompt later.
    """
    if vanilla.style != "vanilla":
        raise ValueError(f"fine-tune rendering requires a vanilla template, got '{vanilla.id}'")
    rows = []
    for split_samples in dprime.splits.values():
        for sample in split_samples:
            rows.append({"messages": finetune_messages(sample, vanilla)})
    write_jsonl(rows, path)
    return FinetuneFile(path=path, digest=sha256_file(path), records=len(rows))
