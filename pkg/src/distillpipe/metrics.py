"""Task-specific evaluation metrics.

Covers overlapped entity density for summaries, label accuracy for NLU
tasks, judge-graded helpfulness for conversations (0-6 scale, multi-turn
aware), question complexity scoring (1-5), and aggregation of blinded human
ratings. Every report records the digests of whatever specs produced it so
numbers are never compared across incompatible setups.
"""

from __future__ import annotations

import statistics
import string
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

from .core import Label, Sample, digest_of
from .gateway import Backend, GenerationConfig, ModelEndpoint, generate_batch
from .parsers import RatingParseError, parse_difficulty, parse_rating
from .prompts import PromptLibrary, builtin_library, render

DEFAULT_STOPWORDS = frozenset(
    """
    a an the and or but if then else of in on at to for with by from as is are
    was were be been being it its this that these those he she they we you i
    his her their our your my me him them us not no nor so do does did done
    have has had will would shall should can could may might must there here
    when where what who whom which how why all any both each few more most
    other some such than too very s t just now
    """.split()
)


class MissingGoldError(KeyError):
    pass


class EmptySummaryError(ValueError):
    pass


class DuplicateRatingError(ValueError):
    pass


class RangeError(ValueError):
    pass


@dataclass(frozen=True)
class EntityExtractorSpec:
    """How entities are pulled out of text; the same spec must be applied to
    both sides of a density computation."""

    kind: str = "heuristic"
    stopwords: frozenset[str] = DEFAULT_STOPWORDS
    judge: ModelEndpoint | None = None
    template_id: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("heuristic", "llm"):
            raise ValueError("extractor kind must be 'heuristic' or 'llm'")
        if self.kind == "llm" and (self.judge is None or self.template_id is None):
            raise ValueError("llm extractor needs a judge endpoint and a template id")
        object.__setattr__(self, "stopwords", frozenset(w.lower() for w in self.stopwords))

    def digest(self) -> str:
        if self.kind == "heuristic":
            return digest_of({"kind": "heuristic", "stopwords": sorted(self.stopwords)})
        return digest_of(
            {"kind": "llm", "model": self.judge.model, "template_id": self.template_id}
        )


@dataclass(frozen=True)
class EvalReport:
    metric: str
    per_sample: dict[str, float]
    failures: dict[str, str] = field(default_factory=dict)
    spec_digests: dict[str, str] = field(default_factory=dict)
    scale: float = 1.0

    def aggregate(self) -> dict[str, Any]:
        values = [v * self.scale for v in self.per_sample.values()]
        return {
            "mean": statistics.mean(values) if values else None,
            "median": statistics.median_low(values) if values else None,
            "median_rule": "lower",
            "count": len(values),
            "failures": len(self.failures),
        }

    @property
    def mean(self) -> float | None:
        return self.aggregate()["mean"]

    @property
    def median(self) -> float | None:
        return self.aggregate()["median"]

    def to_dict(self) -> dict[str, Any]:
        return {
            "metric": self.metric,
            "spec_digests": dict(self.spec_digests),
            "per_sample": dict(self.per_sample),
            "failures": dict(self.failures),
            "scale": self.scale,
            "aggregate": self.aggregate(),
        }


# --- entity density (summarization) ---------------------------------------

def extract_entities_heuristic(text: str, stopwords: frozenset[str] = DEFAULT_STOPWORDS) -> set[str]:
    """Maximal runs of capitalized-or-numeric tokens, lowercased.

    Tokens are whitespace-delimited with leading/trailing punctuation
    stripped; a stopword (case-insensitive) never joins a run, so
    sentence-initial "The" cannot leak into an entity.
    """
    entities: set[str] = set()
    run: list[str] = []
    for raw_token in text.split():
        token = raw_token.strip(string.punctuation)
        qualified = (
            token != ""
            and (token[0].isupper() or token.isdigit())
            and token.lower() not in stopwords
        )
        if qualified:
            run.append(token)
        elif run:
            entities.add(" ".join(run).lower())
            run = []
    if run:
        entities.add(" ".join(run).lower())
    return entities


_LLM_EXTRACTION_CONFIG = GenerationConfig(max_new_tokens=512)


def _extract_entities_llm(text: str, spec: EntityExtractorSpec, backend: Backend, library: PromptLibrary) -> set[str]:
    template = library.get(spec.template_id)
    instance = render(template, Sample(id="extract", input_fields={"article": text}))
    record = generate_batch(spec.judge, [instance], _LLM_EXTRACTION_CONFIG, backend)[0]
    if not record.ok:
        raise RuntimeError(f"entity extraction call failed: {record.error}")
    return {line.strip().lower() for line in record.raw_output.splitlines() if line.strip()}


def extract_entities(text: str, spec: EntityExtractorSpec, backend: Backend | None = None, library: PromptLibrary | None = None) -> set[str]:
    if spec.kind == "heuristic":
        return extract_entities_heuristic(text, spec.stopwords)
    if backend is None:
        raise ValueError("llm extractor requires a backend")
    return _extract_entities_llm(text, spec, backend, library or builtin_library())


def entity_density(
    summaries: Sequence[str],
    documents: Sequence[str],
    extractor: EntityExtractorSpec = EntityExtractorSpec(),
    ids: Sequence[str] | None = None,
    backend: Backend | None = None,
) -> EvalReport:
    """Overlapped entities per summary token, paired by index.

    The denominator is the whitespace-token count of the generated summary;
    an empty summary is a failure entry, not a zero, so it cannot silently
    drag the mean."""
    if len(summaries) != len(documents):
        raise ValueError("summaries and documents must have equal length")
    if ids is None:
        ids = [str(i) for i in range(len(summaries))]
    per_sample: dict[str, float] = {}
    failures: dict[str, str] = {}
    for sid, summary, document in zip(ids, summaries, documents):
        tokens = len(summary.split())
        if tokens == 0:
            failures[sid] = "EmptySummaryError: summary has no tokens"
            continue
        summ_entities = extract_entities(summary, extractor, backend)
        doc_entities = extract_entities(document, extractor, backend)
        per_sample[sid] = len(summ_entities & doc_entities) / tokens
    return EvalReport(
        metric="entity_density",
        per_sample=per_sample,
        failures=failures,
        spec_digests={"extractor": extractor.digest()},
    )


# --- label accuracy (NLU) --------------------------------------------------

def accuracy(
    predictions: Mapping[str, Label | None],
    gold: Mapping[str, Label],
) -> EvalReport:
    """Exact-match accuracy of normalized labels, reported as a percentage.

    A prediction of None marks an unparseable output: it scores 0 and is
    listed as a failure, but stays in the denominator.
    """
    per_sample: dict[str, float] = {}
    failures: dict[str, str] = {}
    for sid, prediction in predictions.items():
        if sid not in gold:
            raise MissingGoldError(f"no gold label for sample '{sid}'")
        if prediction is None:
            per_sample[sid] = 0.0
            failures[sid] = "unparseable prediction"
            continue
        expected = gold[sid]
        per_sample[sid] = float(
            prediction.kind == expected.kind and prediction.value == expected.value
        )
    return EvalReport(metric="accuracy", per_sample=per_sample, failures=failures, scale=100.0)


# --- judge-graded helpfulness (conversation, 0-6) ---------------------------

def hhh_mt(
    judge: ModelEndpoint,
    transcript: Sequence[Mapping[str, Any]],
    backend: Backend,
    library: PromptLibrary | None = None,
    parallelism: int = 1,
) -> EvalReport:
    """Judge-graded 0-6 rating per turn, averaged flatly over all turns.

    Each transcript entry carries chat_history, query, and response; a turn
    with empty history is rated with the single-turn prompt, which omits the
    chat-history block entirely.
    """
    library = library or builtin_library()
    multi = library.get("hhh-mt-judge")
    single = library.get("hhh-mt-judge-single")
    instances = []
    ids = []
    for i, turn in enumerate(transcript):
        sid = str(turn.get("id", f"turn-{i}"))
        history = turn.get("chat_history") or []
        template = multi if history else single
        fields = {"query": turn["query"], "response": turn["response"]}
        if history:
            fields["chat_history"] = history
        instances.append(render(template, Sample(id=sid, input_fields=fields)))
        ids.append(sid)
    config = GenerationConfig(max_new_tokens=multi.max_new_tokens)
    records = generate_batch(judge, instances, config, backend, parallelism, sample_ids=ids)
    per_sample: dict[str, float] = {}
    failures: dict[str, str] = {}
    for record in records:
        if not record.ok:
            failures[record.sample_id] = record.error or "generation failed"
            continue
        try:
            per_sample[record.sample_id] = float(parse_rating(record.raw_output, 0, 6))
        except RatingParseError as exc:
            failures[record.sample_id] = f"RatingParseError: {exc}"
    return EvalReport(
        metric="hhh_mt",
        per_sample=per_sample,
        failures=failures,
        spec_digests={
            "judge_model": digest_of(judge.model),
            "judge_template": digest_of([multi.user_text, single.user_text]),
        },
    )


# --- question complexity (math, 1-5) ----------------------------------------

def complexity(
    judge: ModelEndpoint,
    questions: Sequence[Mapping[str, Any]],
    backend: Backend,
    library: PromptLibrary | None = None,
    parallelism: int = 1,
) -> EvalReport:
    """Judge-assigned 1-5 difficulty per question; aggregate carries both the
    mean and the lower-median."""
    library = library or builtin_library()
    template = library.get("complexity-judge")
    instances = []
    ids = []
    for i, item in enumerate(questions):
        sid = str(item.get("id", f"q-{i}"))
        fields = {"question": item["question"], "answer": item["answer"]}
        instances.append(render(template, Sample(id=sid, input_fields=fields)))
        ids.append(sid)
    config = GenerationConfig(max_new_tokens=template.max_new_tokens)
    records = generate_batch(judge, instances, config, backend, parallelism, sample_ids=ids)
    per_sample: dict[str, float] = {}
    failures: dict[str, str] = {}
    for record in records:
        if not record.ok:
            failures[record.sample_id] = record.error or "generation failed"
            continue
        try:
            per_sample[record.sample_id] = float(parse_difficulty(record.raw_output))
        except RatingParseError as exc:
            failures[record.sample_id] = f"RatingParseError: {exc}"
    return EvalReport(
        metric="complexity",
        per_sample=per_sample,
        failures=failures,
        spec_digests={
            "judge_model": digest_of(judge.model),
            "judge_template": digest_of(template.user_text),
        },
    )


# --- human rating aggregation ------------------------------------------------

@dataclass(frozen=True)
class HumanRating:
    rater_id: str
    model_id: str
    item_id: str
    value: int


def aggregate_human_ratings(ratings: Iterable[HumanRating]) -> dict[str, dict[str, Any]]:
    """Per-model helpfulness from blinded 1-5 ratings.

    Every rater gets one mean per model; the model's overall score is the
    mean of those per-rater means, so a prolific rater cannot out-vote the
    others.
    """
    seen: set[tuple[str, str, str]] = set()
    by_model_rater: dict[str, dict[str, list[int]]] = {}
    for rating in ratings:
        if not 1 <= rating.value <= 5:
            raise RangeError(f"rating {rating.value} outside [1, 5]")
        key = (rating.rater_id, rating.model_id, rating.item_id)
        if key in seen:
            raise DuplicateRatingError(
                f"rater '{rating.rater_id}' already rated item '{rating.item_id}' "
                f"for model '{rating.model_id}'"
            )
        seen.add(key)
        by_model_rater.setdefault(rating.model_id, {}).setdefault(rating.rater_id, []).append(
            rating.value
        )
    result: dict[str, dict[str, Any]] = {}
    for model_id, by_rater in by_model_rater.items():
        per_rater = {rater: statistics.mean(vals) for rater, vals in by_rater.items()}
        result[model_id] = {
            "per_rater": per_rater,
            "overall": statistics.mean(per_rater.values()),
        }
    return result
