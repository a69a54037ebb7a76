"""Command-line driver wiring the whole distillation workflow.

Subcommands mirror the pipeline stages: ingest -> select -> synthesize ->
finetune -> evaluate -> cost -> rate serve -> report. Every run is keyed by
the digest of its resolved config; artifacts land in a locked run directory
and a stage whose inputs are unchanged reports "up to date" instead of
recomputing. Errors exit 2 (config), 3 (data), or 4 (provider) with a JSON
error object on stderr; logs are JSON lines on stderr.
"""

from __future__ import annotations

import argparse
import contextlib
import datetime
import fcntl
import json
import logging
import sys
from dataclasses import replace
from decimal import Decimal
from importlib import resources
from pathlib import Path
from typing import Any

from . import costs
from .core import (
    Dataset,
    Label,
    NormalizationError,
    RunManifest,
    Sample,
    TaskKind,
    dataset_digests,
    digest_of,
    normalize_label,
    read_dataset,
    read_jsonl,
    read_split,
    validate_dataset,
    write_dataset,
    write_jsonl,
    write_split,
)
from .finetune import (
    DeadlineExceeded,
    FinetuneConfig,
    HttpFinetuneProvider,
    MockFinetuneProvider,
    SchemaError,
    await_completion,
    submit,
    validate_finetune_file,
)
from .gateway import (
    Backend,
    EmptyCompletionError,
    GenerationConfig,
    HttpBackend,
    MissingCredentialError,
    MockBackend,
    ModelEndpoint,
    ProviderError,
    TransportError,
    UnmatchedRequestError,
)
from .metrics import (
    MissingGoldError,
    accuracy,
    complexity,
    entity_density,
    hhh_mt,
)
from .parsers import ParseError
from .prompts import (
    MissingFieldError,
    PromptLibrary,
    PromptTemplate,
    UnknownTemplateError,
    builtin_library,
    render,
)
from .synthesis import (
    AlignmentError,
    CandidateGrid,
    EmptyGridError,
    MetricSpec,
    MissingLabelError,
    NoQualifiedCandidateError,
    build_dtrain_prime,
    emit_finetune_dataset,
    generate_synthetic,
    label_kind_for,
    select_hyperparams,
    select_template,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_PROVIDER = 4


class ConfigError(ValueError):
    """Bad or missing configuration; exits 2."""


class DataError(ValueError):
    """Input data failed validation or processing; exits 3."""


class LockedError(ConfigError):
    """The run directory is held by another process."""


_CONFIG_EXCEPTIONS = (ConfigError, UnknownTemplateError, EmptyGridError)
_DATA_EXCEPTIONS = (
    DataError,
    SchemaError,
    AlignmentError,
    MissingLabelError,
    MissingFieldError,
    MissingGoldError,
    ParseError,
    NormalizationError,
    NoQualifiedCandidateError,
    FileNotFoundError,
)
_PROVIDER_EXCEPTIONS = (
    TransportError,
    ProviderError,
    MissingCredentialError,
    EmptyCompletionError,
    UnmatchedRequestError,
    DeadlineExceeded,
)


def classify_error(exc: BaseException) -> tuple[int, str]:
    if isinstance(exc, _PROVIDER_EXCEPTIONS):
        return EXIT_PROVIDER, "provider_error"
    if isinstance(exc, _CONFIG_EXCEPTIONS):
        return EXIT_CONFIG, "config_error"
    if isinstance(exc, _DATA_EXCEPTIONS):
        return EXIT_DATA, "data_error"
    return EXIT_DATA, "data_error"


class _JsonLogFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        entry = {
            "ts": datetime.datetime.now(datetime.timezone.utc).isoformat(),
            "level": record.levelname.lower(),
            "logger": record.name,
            "message": record.getMessage(),
        }
        return json.dumps(entry, ensure_ascii=False)


def setup_logging(verbose: bool) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(_JsonLogFormatter())
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(logging.DEBUG if verbose else logging.INFO)


# --- run context -------------------------------------------------------------

TASK_DEFAULT_SYNTH_TEST = {TaskKind.SUMMARIZATION: True}


class RunContext:
    def __init__(self, config_path: Path, run_root: str | None):
        config_path = Path(config_path)
        if not config_path.exists():
            raise ConfigError(f"config file not found: {config_path}")
        try:
            self.config: dict[str, Any] = json.loads(config_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(self.config, dict):
            raise ConfigError("config file must hold a JSON object")
        self.base_dir = config_path.parent
        self.config_digest = digest_of(self.config)
        root = Path(run_root) if run_root else self._path(self.config.get("run_root", "runs"))
        self.run_dir = root / f"run-{self.config_digest[:12]}"
        self.run_dir.mkdir(parents=True, exist_ok=True)
        manifest_path = self.run_dir / "manifest.json"
        if manifest_path.exists():
            self.manifest = RunManifest.load(manifest_path)
        else:
            self.manifest = RunManifest.for_config(self.config_digest)
            self.manifest.created_at = datetime.datetime.now(datetime.timezone.utc).isoformat()
        self.library = builtin_library()

    def _path(self, value: str) -> Path:
        path = Path(value)
        return path if path.is_absolute() else self.base_dir / path

    def require(self, key: str) -> Any:
        if key not in self.config:
            raise ConfigError(f"config is missing required key '{key}'")
        return self.config[key]

    @property
    def task(self) -> TaskKind:
        try:
            return TaskKind(self.require("task"))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def save_manifest(self) -> None:
        self.manifest.save(self.run_dir / "manifest.json")

    @contextlib.contextmanager
    def lock(self):
        lock_path = self.run_dir / ".lock"
        fh = lock_path.open("w")
        try:
            fcntl.flock(fh, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except BlockingIOError as exc:
            fh.close()
            raise LockedError(f"run directory {self.run_dir} is locked by another process") from exc
        try:
            yield
        finally:
            fcntl.flock(fh, fcntl.LOCK_UN)
            fh.close()

    # -- resolved pieces ------------------------------------------------

    def endpoint(self, role: str, required: bool = True) -> ModelEndpoint | None:
        spec = self.config.get(role)
        if spec is None:
            if required:
                raise ConfigError(f"config is missing the '{role}' endpoint")
            return None
        try:
            return ModelEndpoint(
                model=spec["model"],
                base_url=spec.get("base_url", ""),
                api_key_env=spec.get("api_key_env"),
                price_per_1k_input=spec.get("price_per_1k_input", 0.0),
                price_per_1k_output=spec.get("price_per_1k_output", 0.0),
            )
        except KeyError as exc:
            raise ConfigError(f"endpoint '{role}' is missing key {exc}") from exc

    def backend(self) -> Backend:
        spec = self.config.get("backend") or {"kind": "http"}
        kind = spec.get("kind", "http")
        if kind == "mock":
            fixture = spec.get("fixture")
            if not fixture:
                raise ConfigError("mock backend needs a 'fixture' file")
            fixture_path = self._path(fixture)
            if not fixture_path.exists():
                raise ConfigError(f"mock fixture not found: {fixture_path}")
            return MockBackend.from_file(fixture_path)
        if kind == "http":
            return HttpBackend(
                max_attempts=spec.get("max_attempts", 3),
                backoff_base_s=spec.get("backoff_base_s", 0.5),
                timeout_s=spec.get("timeout_s", 120.0),
            )
        raise ConfigError(f"unknown backend kind '{kind}'")

    def dataset(self) -> Dataset:
        spec = self.require("dataset")
        try:
            name, directory = spec["name"], self._path(spec["dir"])
        except KeyError as exc:
            raise ConfigError(f"dataset config is missing key {exc}") from exc
        task = self.task  # a bad task name is a config error, not a data error
        try:
            return read_dataset(name, task, directory)
        except FileNotFoundError as exc:
            raise DataError(str(exc)) from exc
        except ValueError as exc:
            raise DataError(str(exc)) from exc

    def templates(self) -> tuple[PromptTemplate, PromptTemplate]:
        """(teacher template, vanilla template) after selection/config/defaults."""
        task = self.task
        selected = self.manifest.templates.get("selected")
        if self.config.get("template"):
            teacher_template = self.library.get(self.config["template"])
        elif selected:
            teacher_template = self.library.get(selected["id"])
        else:
            variants = self.library.variants(task)
            teacher_template = variants[0] if variants else self.library.lookup(task, "vanilla")
        if self.config.get("vanilla_template"):
            vanilla = self.library.get(self.config["vanilla_template"])
        else:
            vanilla = self.library.lookup(task, "vanilla")
        return teacher_template, vanilla

    def generation_config(self, template: PromptTemplate) -> GenerationConfig:
        spec = self.config.get("generation")
        if spec is None and self.manifest.generation_config:
            spec = dict(self.manifest.generation_config)
        if spec is None:
            spec = {}
        spec = dict(spec)
        spec.pop("max_tokens", None)
        max_new = spec.pop("max_new_tokens", template.max_new_tokens)
        try:
            return GenerationConfig(
                temperature=spec.get("temperature", 0.0),
                top_p=spec.get("top_p", 1.0),
                top_k=spec.get("top_k"),
                max_new_tokens=max_new,
                frequency_penalty=spec.get("frequency_penalty", 0.0),
                presence_penalty=spec.get("presence_penalty", 0.0),
                stop=tuple(spec.get("stop", ())),
            )
        except ValueError as exc:
            raise ConfigError(f"bad generation config: {exc}") from exc

    def metric_spec(self) -> MetricSpec:
        spec = self.config.get("metric") or {}
        metric_id = spec.get("metric") or _default_metric(self.task)
        judge = self.endpoint("judge", required=False) if metric_id == "hhh_mt_mean" else None
        if metric_id == "hhh_mt_mean" and judge is None:
            raise ConfigError("metric hhh_mt_mean needs a 'judge' endpoint in the config")
        try:
            return MetricSpec(metric=metric_id, judge=judge)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def parallelism(self) -> int:
        return int(self.config.get("parallelism", 1))

    @property
    def retry_budget(self) -> int:
        return int(self.config.get("retry_budget", 1))

    @property
    def cod_step(self) -> int:
        return int(self.config.get("cod_step", 4))


def _default_metric(task: TaskKind) -> str:
    if task is TaskKind.SUMMARIZATION:
        return "entity_density"
    if task is TaskKind.CONVERSATION:
        return "hhh_mt_mean"
    return "accuracy"


# --- subcommands --------------------------------------------------------------

def cmd_ingest(ctx: RunContext) -> int:
    dataset = ctx.dataset()
    violations = validate_dataset(dataset)
    if violations:
        report = [
            {"sample_id": v.sample_id, "rule": v.rule, "detail": v.detail} for v in violations
        ]
        out = ctx.run_dir / "reports" / "violations.json"
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(json.dumps(report, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
        raise DataError(f"dataset failed validation with {len(violations)} violation(s); see {out}")
    digests = dataset_digests(dataset)
    key = digest_of(digests)
    if ctx.manifest.stage_key("ingest") == key:
        print("ingest: up to date")
        return EXIT_OK
    paths = write_dataset(dataset, ctx.run_dir / "datasets")
    for split, path in paths.items():
        ctx.manifest.record_artifact(f"dataset.{split}", path)
    ctx.manifest.dataset_digests = digests
    ctx.manifest.record_stage(
        "ingest", key, details={"splits": {s: len(v) for s, v in dataset.splits.items()}}
    )
    ctx.save_manifest()
    sizes = ", ".join(f"{s}={len(v)}" for s, v in dataset.splits.items())
    print(f"ingest: registered '{dataset.name}' ({dataset.task.value}; {sizes})")
    return EXIT_OK


def _eval_split(ctx: RunContext, dataset: Dataset) -> list[Sample]:
    if "eval" not in dataset.splits:
        raise DataError("selection needs an 'eval' split in the dataset")
    d_eval = list(dataset.splits["eval"])
    subset = ctx.config.get("eval_subset")
    if subset:
        d_eval = d_eval[: int(subset)]
    if not d_eval:
        raise DataError("eval split is empty")
    return d_eval


def cmd_select(ctx: RunContext) -> int:
    dataset = ctx.dataset()
    task = ctx.task
    d_eval = _eval_split(ctx, dataset)
    metric = ctx.metric_spec()
    teacher = ctx.endpoint("teacher")
    backend = ctx.backend()

    if ctx.config.get("template"):
        variants = [ctx.library.get(ctx.config["template"])]
    elif ctx.config.get("template_variants"):
        variants = [ctx.library.get(tid) for tid in ctx.config["template_variants"]]
    else:
        variants = ctx.library.variants(task)
        if not variants:
            raise ConfigError(
                f"no elaborate template variants registered for task '{task.value}'; "
                "set 'template' or 'template_variants' in the config"
            )

    grid_spec = ctx.config.get("grid")
    if grid_spec:
        try:
            configs = tuple(
                ctx.generation_config(variants[0])
                if g == {}
                else GenerationConfig(
                    temperature=g.get("temperature", 0.0),
                    top_p=g.get("top_p", 1.0),
                    top_k=g.get("top_k"),
                    max_new_tokens=g.get("max_new_tokens", variants[0].max_new_tokens),
                    frequency_penalty=g.get("frequency_penalty", 0.0),
                    presence_penalty=g.get("presence_penalty", 0.0),
                    stop=tuple(g.get("stop", ())),
                )
                for g in grid_spec
            )
        except ValueError as exc:
            raise ConfigError(f"bad grid entry: {exc}") from exc
    else:
        configs = (ctx.generation_config(variants[0]),)
    grid = CandidateGrid(configs=configs)

    key = digest_of(
        {
            "eval": dataset_digests(dataset).get("eval"),
            "subset": ctx.config.get("eval_subset"),
            "grid": [c.to_dict() for c in grid.configs],
            "variants": [(t.id, t.version) for t in variants],
            "metric": metric.metric,
            "teacher": teacher.model,
            "cod_step": ctx.cod_step,
        }
    )
    if ctx.manifest.stage_key("select") == key:
        print("select: up to date")
        return EXIT_OK

    chosen_config, hp_table = select_hyperparams(
        teacher, variants[0], grid, d_eval, metric, backend,
        parallelism=ctx.parallelism, cod_step=ctx.cod_step,
    )
    chosen_template, tpl_table = select_template(
        teacher, variants, chosen_config, d_eval, metric, backend,
        parallelism=ctx.parallelism, cod_step=ctx.cod_step,
    )

    scores_dir = ctx.run_dir / "scores"
    scores_dir.mkdir(parents=True, exist_ok=True)
    (scores_dir / "hyperparams.json").write_text(
        json.dumps({"chosen": chosen_config.to_dict(), "table": hp_table}, indent=2) + "\n"
    )
    (scores_dir / "template.json").write_text(
        json.dumps({"chosen": chosen_template.id, "table": tpl_table}, indent=2) + "\n"
    )
    ctx.manifest.generation_config = chosen_config.to_dict()
    ctx.manifest.templates["selected"] = {
        "id": chosen_template.id,
        "version": chosen_template.version,
    }
    ctx.manifest.record_stage(
        "select", key, details={"template": chosen_template.id, "metric": metric.metric}
    )
    ctx.save_manifest()
    print(f"select: config {chosen_config.to_dict()} template '{chosen_template.id}'")
    return EXIT_OK


def _dry_run_estimate(
    teacher: ModelEndpoint,
    template: PromptTemplate,
    samples: list[Sample],
    config: GenerationConfig,
) -> dict[str, Any]:
    input_tokens = 0
    for sample in samples:
        instance = render(template, sample)
        input_tokens += sum(costs.estimate_tokens(m["content"]) for m in instance.messages())
    output_bound = config.max_new_tokens * len(samples)
    price_in = Decimal(str(teacher.price_per_1k_input))
    price_out = Decimal(str(teacher.price_per_1k_output))
    estimate = (
        Decimal(input_tokens) / 1000 * price_in + Decimal(output_bound) / 1000 * price_out
    )
    return {
        "samples": len(samples),
        "estimated_input_tokens": input_tokens,
        "output_token_bound": output_bound,
        "estimated_cost_upper_bound": str(estimate.quantize(Decimal("0.0001"))),
        "token_counts": "estimated",
    }


def cmd_synthesize(ctx: RunContext, dry_run: bool) -> int:
    dataset = ctx.dataset()
    task = ctx.task
    violations = validate_dataset(dataset)
    if violations:
        raise DataError(f"dataset failed validation with {len(violations)} violation(s)")
    template, vanilla = ctx.templates()
    config = ctx.generation_config(template)
    teacher = ctx.endpoint("teacher")
    if "train" not in dataset.splits:
        raise DataError("synthesis needs a 'train' split")
    d_train = list(dataset.splits["train"])

    synth_test = ctx.config.get("synthesize_test_split")
    if synth_test is None:
        synth_test = TASK_DEFAULT_SYNTH_TEST.get(task, False)
    d_test = list(dataset.splits.get("test", ())) if synth_test else []

    if dry_run:
        estimate = _dry_run_estimate(teacher, template, d_train + d_test, config)
        estimate["template"] = template.id
        estimate["vanilla_template"] = vanilla.id
        print(json.dumps(estimate, indent=2))
        return EXIT_OK

    backend = ctx.backend()
    key = digest_of(
        {
            "datasets": dataset_digests(dataset),
            "template": (template.id, template.version),
            "vanilla": (vanilla.id, vanilla.version),
            "config": config.to_dict(),
            "teacher": teacher.model,
            "retry_budget": ctx.retry_budget,
            "cod_step": ctx.cod_step,
            "synthesize_test_split": bool(synth_test),
        }
    )
    finetune_path = ctx.run_dir / "finetune" / "train.jsonl"
    if ctx.manifest.stage_key("synthesize") == key and finetune_path.exists():
        print("synthesize: up to date")
        return EXIT_OK

    def retry(samples):
        return generate_synthetic(
            teacher, template, config, samples, task, backend, ctx.parallelism, ctx.cod_step
        )

    results = retry(d_train)
    dprime, report = build_dtrain_prime(
        d_train,
        results,
        retry=retry,
        retry_budget=ctx.retry_budget,
        name=f"{dataset.name}-prime",
        task=task,
    )

    logs_dir = ctx.run_dir / "logs"
    write_jsonl((r.record.to_dict() for r in results), logs_dir / "generations.train.jsonl")

    datasets_dir = ctx.run_dir / "datasets"
    prime_train = datasets_dir / f"{dataset.name}-prime.train.jsonl"
    write_split(dprime.splits["train"], prime_train)
    ctx.manifest.record_artifact("dtrain_prime", prime_train)

    if d_test:
        test_results = generate_synthetic(
            teacher, template, config, d_test, task, backend, ctx.parallelism, ctx.cod_step
        )
        write_jsonl(
            (r.record.to_dict() for r in test_results), logs_dir / "generations.test.jsonl"
        )
        kept_test = [
            r.sample.with_synthetic_label(r.label) for r in test_results if r.ok
        ]
        report["test_excluded"] = {
            r.sample.id: str(r.error) for r in test_results if not r.ok
        }
        prime_test = datasets_dir / f"{dataset.name}-prime.test.jsonl"
        write_split(kept_test, prime_test)
        ctx.manifest.record_artifact("dtest_prime", prime_test)

    reports_dir = ctx.run_dir / "reports"
    reports_dir.mkdir(parents=True, exist_ok=True)
    (reports_dir / "exclusions.json").write_text(
        json.dumps(report, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )

    if not dprime.splits["train"]:
        ctx.manifest.record_stage("synthesize", key, status="failed", details=report)
        ctx.save_manifest()
        raise DataError("every training sample was excluded as unparseable; nothing to emit")

    emitted = emit_finetune_dataset(dprime, vanilla, finetune_path)
    ctx.manifest.record_artifact("finetune_dataset", finetune_path)
    ctx.manifest.templates["teacher"] = {"id": template.id, "version": template.version}
    ctx.manifest.templates["vanilla"] = {"id": vanilla.id, "version": vanilla.version}
    ctx.manifest.generation_config = config.to_dict()
    ctx.manifest.record_stage(
        "synthesize",
        key,
        details={
            "kept": report["kept_count"],
            "excluded": report["excluded_count"],
            "finetune_digest": emitted.digest,
        },
    )
    ctx.save_manifest()
    print(
        f"synthesize: kept {report['kept_count']}/{report['input_count']} "
        f"({report['excluded_count']} excluded); fine-tune dataset {finetune_path} "
        f"({emitted.records} records, sha256 {emitted.digest[:12]})"
    )
    return EXIT_OK


def cmd_finetune(ctx: RunContext, dry_run: bool) -> int:
    dataset_path = ctx.run_dir / "finetune" / "train.jsonl"
    if not dataset_path.exists():
        raise DataError(f"no fine-tune dataset at {dataset_path}; run synthesize first")
    records = validate_finetune_file(dataset_path)
    spec = ctx.config.get("finetune") or {}
    if "base_model" not in spec:
        raise ConfigError("config needs finetune.base_model")
    try:
        ft_config = FinetuneConfig(
            base_model=spec["base_model"],
            batch_size_multiplier=spec.get("batch_size_multiplier", 1),
            epochs=spec.get("epochs", 5),
            learning_rate=spec.get("learning_rate", 2e-5),
        )
    except ValueError as exc:
        raise ConfigError(f"bad finetune config: {exc}") from exc

    if dry_run:
        print(
            json.dumps(
                {"records": records, "config": ft_config.to_dict(), "dataset": str(dataset_path)},
                indent=2,
            )
        )
        return EXIT_OK

    provider_spec = spec.get("provider") or {}
    kind = provider_spec.get("kind", "http")
    if kind == "mock":
        schedule = provider_spec.get("schedule")
        if not schedule:
            raise ConfigError("mock fine-tune provider needs a 'schedule' file")
        provider = MockFinetuneProvider.from_file(ctx._path(schedule))
    elif kind == "http":
        if "base_url" not in provider_spec:
            raise ConfigError("http fine-tune provider needs 'base_url'")
        provider = HttpFinetuneProvider(
            provider_spec["base_url"], api_key_env=provider_spec.get("api_key_env")
        )
    else:
        raise ConfigError(f"unknown fine-tune provider kind '{kind}'")

    from .core import sha256_file

    key = digest_of(
        {"dataset": sha256_file(dataset_path), "config": ft_config.to_dict(), "provider": kind}
    )
    previous = ctx.manifest.stages.get("finetune") or {}
    if previous.get("key") == key and previous.get("status") == "complete":
        print("finetune: up to date")
        return EXIT_OK

    job = submit(provider, dataset_path, ft_config)
    logger.info("submitted fine-tune job '%s'", job.job_id)
    job = await_completion(
        provider,
        job,
        interval_s=spec.get("poll_interval_s", 5.0),
        deadline_s=spec.get("deadline_s", 3600.0),
    )
    if job.status == "failed":
        ctx.manifest.record_stage(
            "finetune", key, status="failed", details={"job_id": job.job_id, "message": job.message}
        )
        ctx.save_manifest()
        raise ProviderError(500, f"fine-tune job '{job.job_id}' failed: {job.message}")
    details = {
        "job_id": job.job_id,
        "dataset_digest": job.dataset_digest,
        "result_model": job.result.model if job.result else None,
        "result_base_url": job.result.base_url if job.result else None,
    }
    ctx.manifest.record_stage("finetune", key, details=details)
    ctx.save_manifest()
    print(f"finetune: job {job.job_id} succeeded -> model '{details['result_model']}'")
    return EXIT_OK


# --- evaluate ------------------------------------------------------------------

def _load_labelled_file(path: Path, key: str) -> dict[str, str]:
    rows = read_jsonl(path)
    out: dict[str, str] = {}
    for line_no, row in enumerate(rows, start=1):
        if "id" not in row or key not in row:
            raise DataError(
                f"bad row at {path}:{line_no}: expected JSONL objects "
                f"with keys 'id' and '{key}', got {sorted(row)}"
            )
        out[str(row["id"])] = str(row[key])
    return out


def _prime_split(ctx: RunContext, dataset_name: str, split: str) -> list[Sample]:
    path = ctx.run_dir / "datasets" / f"{dataset_name}-prime.{split}.jsonl"
    if not path.exists():
        raise DataError(f"no synthesized split at {path}; run synthesize first")
    return list(read_split(path))


def _write_report(ctx: RunContext, name: str, report) -> Path:
    reports_dir = ctx.run_dir / "reports"
    reports_dir.mkdir(parents=True, exist_ok=True)
    path = reports_dir / f"{name}.json"
    path.write_text(json.dumps(report.to_dict(), indent=2, ensure_ascii=False) + "\n")
    return path


def _print_report(report) -> None:
    agg = report.aggregate()
    mean = "n/a" if agg["mean"] is None else f"{agg['mean']:.2f}"
    median = "n/a" if agg["median"] is None else f"{agg['median']:.2f}"
    print(
        f"{report.metric}: mean={mean} median={median} "
        f"count={agg['count']} failures={agg['failures']}"
    )


def cmd_evaluate(ctx: RunContext, args: argparse.Namespace) -> int:
    dataset = ctx.dataset()
    task = ctx.task
    split_name = args.split
    if split_name not in dataset.splits:
        raise DataError(f"dataset has no '{split_name}' split")
    split = list(dataset.splits[split_name])
    by_id = {sample.id: sample for sample in split}

    if args.metric == "accuracy":
        gold = {}
        for sample in split:
            if sample.gold_label is None:
                raise DataError(f"sample '{sample.id}' has no gold label")
            gold[sample.id] = sample.gold_label
        predictions: dict[str, Label | None] = {}
        if args.predictions:
            raw_predictions = _load_labelled_file(ctx._path(args.predictions), "raw")
            _, vanilla = ctx.templates()
            for sid, raw in raw_predictions.items():
                if sid not in by_id:
                    raise MissingGoldError(f"prediction for unknown sample '{sid}'")
                kind = label_kind_for(vanilla, task, by_id[sid])
                try:
                    predictions[sid] = normalize_label(raw, kind)
                except NormalizationError:
                    predictions[sid] = None
        else:
            for sample in _prime_split(ctx, dataset.name, split_name):
                predictions[sample.id] = sample.synthetic_label
        report = accuracy(predictions, gold)
    elif args.metric == "density":
        if args.summaries:
            summaries_by_id = _load_labelled_file(ctx._path(args.summaries), "summary")
        else:
            summaries_by_id = {
                s.id: str(s.synthetic_label.value)
                for s in _prime_split(ctx, dataset.name, split_name)
                if s.synthetic_label is not None
            }
        ids = [sid for sid in by_id if sid in summaries_by_id]
        if not ids:
            raise DataError("no summaries to evaluate")
        report = entity_density(
            summaries=[summaries_by_id[sid] for sid in ids],
            documents=[str(by_id[sid].input_fields["article"]) for sid in ids],
            ids=ids,
        )
    elif args.metric == "hhh-mt":
        judge = ctx.endpoint("judge")
        if not args.responses:
            raise ConfigError("evaluate --metric hhh-mt needs --responses")
        responses = _load_labelled_file(ctx._path(args.responses), "response")
        transcript = []
        for sample in split:
            if sample.id not in responses:
                raise DataError(f"no response for sample '{sample.id}'")
            transcript.append(
                {
                    "id": sample.id,
                    "chat_history": sample.input_fields.get("chat_history") or [],
                    "query": sample.input_fields["query"],
                    "response": responses[sample.id],
                }
            )
        report = hhh_mt(judge, transcript, ctx.backend(), ctx.library, ctx.parallelism)
    elif args.metric == "complexity":
        judge = ctx.endpoint("judge")
        questions = []
        for sample in split:
            answer = sample.input_fields.get("answer")
            if answer is None and sample.gold_label is not None:
                answer = sample.gold_label.value
            if answer is None:
                raise DataError(f"sample '{sample.id}' has no answer for complexity scoring")
            questions.append(
                {"id": sample.id, "question": sample.input_fields["question"], "answer": answer}
            )
        report = complexity(judge, questions, ctx.backend(), ctx.library, ctx.parallelism)
    else:  # pragma: no cover - argparse restricts choices
        raise ConfigError(f"unknown metric '{args.metric}'")

    path = _write_report(ctx, args.metric.replace("-", "_"), report)
    _print_report(report)
    logger.info("wrote report %s", path)
    return EXIT_OK


def cmd_cost(args: argparse.Namespace, ctx: RunContext | None) -> int:
    if args.scenarios:
        scenarios_path = Path(args.scenarios)
    else:
        scenarios_path = resources.files("distillpipe") / "configs" / "table2.json"
    with resources.as_file(scenarios_path) as path:
        if not Path(path).exists():
            raise ConfigError(f"scenario file not found: {path}")
        scenarios = costs.load_scenarios(Path(path))
    table = costs.comparison_table(scenarios)
    print(table)
    if args.breakeven:
        teacher_name, student_name = args.breakeven
        for name in (teacher_name, student_name):
            if name not in scenarios:
                raise ConfigError(f"scenario '{name}' not in file")
        onetime = args.onetime if args.onetime is not None else "0"
        try:
            n = costs.breakeven(scenarios[teacher_name], scenarios[student_name], onetime)
        except costs.NoBreakevenError as exc:
            raise DataError(str(exc)) from exc
        print(f"breakeven({teacher_name} -> {student_name}, onetime={onetime}): {n} samples")
    if ctx is not None:
        out = ctx.run_dir / "reports" / "cost.txt"
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(table + "\n")
    return EXIT_OK


def cmd_report(ctx: RunContext) -> int:
    reports_dir = ctx.run_dir / "reports"
    entries = []
    for path in sorted(reports_dir.glob("*.json")) if reports_dir.is_dir() else []:
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError:
            continue
        if isinstance(data, dict) and "metric" in data and "aggregate" in data:
            agg = data["aggregate"]
            entries.append(
                {
                    "file": path.name,
                    "metric": data["metric"],
                    "mean": agg.get("mean"),
                    "median": agg.get("median"),
                    "count": agg.get("count"),
                    "failures": agg.get("failures"),
                }
            )
    if not entries:
        raise DataError(f"no evaluation reports under {reports_dir}; run evaluate first")
    headers = ("metric", "mean", "median", "count", "failures", "file")
    rows = [
        (
            e["metric"],
            "n/a" if e["mean"] is None else f"{e['mean']:.2f}",
            "n/a" if e["median"] is None else f"{e['median']:.2f}",
            str(e["count"]),
            str(e["failures"]),
            e["file"],
        )
        for e in entries
    ]
    widths = [max(len(h), *(len(r[i]) for r in rows)) for i, h in enumerate(headers)]
    print("  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)))
    print("  ".join("-" * widths[i] for i in range(len(headers))))
    for row in rows:
        print("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)))
    summary_path = reports_dir / "summary.json"
    summary_path.write_text(json.dumps(entries, indent=2) + "\n")
    return EXIT_OK


def cmd_rate_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .rating.service import create_app

    data_dir = Path(args.data_dir)
    ui_dir = Path(args.ui_dir) if args.ui_dir else None
    app = create_app(data_dir, ui_dir)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


# --- argument parsing -----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="distillpipe",
        description="Distill a large teacher model into a small student via "
        "task-engineered synthetic data, hosted fine-tuning, and task-specific evaluation.",
    )
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", required=True, help="run config JSON file")
        p.add_argument("--run-root", default=None, help="override the run-directory root")
        return p

    with_config(sub.add_parser("ingest", help="validate and register datasets"))
    with_config(sub.add_parser("select", help="pick generation config and template by eval score"))

    p = with_config(sub.add_parser("synthesize", help="teacher synthesis + fine-tune dataset"))
    p.add_argument("--dry-run", action="store_true", help="validate and estimate cost; no calls")

    p = with_config(sub.add_parser("finetune", help="submit the fine-tune job and await it"))
    p.add_argument("--dry-run", action="store_true", help="validate the dataset; no submission")

    p = with_config(sub.add_parser("evaluate", help="compute a task metric"))
    p.add_argument(
        "--metric",
        required=True,
        choices=("density", "accuracy", "hhh-mt", "complexity"),
    )
    p.add_argument("--split", default="test", help="dataset split to evaluate (default test)")
    p.add_argument("--predictions", help="JSONL {id, raw} with model predictions")
    p.add_argument("--summaries", help="JSONL {id, summary} with generated summaries")
    p.add_argument("--responses", help="JSONL {id, response} with conversation responses")

    p = sub.add_parser("cost", help="per-1k-sample cost table and break-even")
    p.add_argument("--config", help="optional run config (copies the table into reports/)")
    p.add_argument("--run-root", default=None)
    p.add_argument("--scenarios", help="scenario JSON file (default: packaged table)")
    p.add_argument(
        "--breakeven",
        nargs=2,
        metavar=("TEACHER", "STUDENT"),
        help="scenario names to compare",
    )
    p.add_argument("--onetime", help="one-time synthesis + fine-tune cost for break-even")

    rate = sub.add_parser("rate", help="human-rating service")
    rate_sub = rate.add_subparsers(dest="rate_command", required=True)
    p = rate_sub.add_parser("serve", help="start the blind rating HTTP service")
    p.add_argument("--data-dir", required=True, help="directory with pools/ and sessions/")
    p.add_argument("--ui-dir", help="static rating UI bundle to mount at /ui")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8410)

    with_config(sub.add_parser("report", help="merge evaluation reports into one table"))
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(getattr(args, "verbose", False))
    try:
        if args.command == "rate":
            return cmd_rate_serve(args)
        if args.command == "cost":
            ctx = RunContext(Path(args.config), args.run_root) if args.config else None
            return cmd_cost(args, ctx)
        ctx = RunContext(Path(args.config), args.run_root)
        with ctx.lock():
            if args.command == "ingest":
                return cmd_ingest(ctx)
            if args.command == "select":
                return cmd_select(ctx)
            if args.command == "synthesize":
                return cmd_synthesize(ctx, args.dry_run)
            if args.command == "finetune":
                return cmd_finetune(ctx, args.dry_run)
            if args.command == "evaluate":
                return cmd_evaluate(ctx, args)
            if args.command == "report":
                return cmd_report(ctx)
        raise ConfigError(f"unknown command '{args.command}'")  # pragma: no cover
    except BaseException as exc:
        if isinstance(exc, (KeyboardInterrupt, SystemExit)):
            raise
        exit_code, code = classify_error(exc)
        logger.debug("command failed", exc_info=True)
        print(
            json.dumps(
                {"error": {"code": code, "message": str(exc), "type": type(exc).__name__}}
            ),
            file=sys.stderr,
        )
        return exit_code


if __name__ == "__main__":
    sys.exit(main())
