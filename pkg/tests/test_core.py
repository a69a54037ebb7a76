"""Domain types, label normalization, dataset IO, digests, and the manifest."""

from __future__ import annotations

import json
import random

import pytest

from distillpipe.core import (
    Dataset,
    Label,
    LabelKind,
    NormalizationError,
    RunManifest,
    Sample,
    TaskKind,
    canonical_json,
    dataset_digests,
    digest_of,
    normalize_label,
    read_dataset,
    read_split,
    validate_dataset,
    write_dataset,
    write_split,
)

from conftest import nli_sample

# Hand-enumerated raw/expected table, written down before the normalizer
# existed. None marks inputs the normalizer must reject.
INTEGER_TABLE = [
    ("4", 4),
    (" 42 ", 42),
    ("+7", 7),
    ("-13", -13),
    ("-42.", -42),
    ("1,234", 1234),
    ("12,345,678", 12345678),
    ("100.", 100),
    ("-2,500.", -2500),
    ("0", 0),
    ("007", 7),
    ("4.", 4),
    ("1000000", 1000000),
    ("four", None),
    ("3.5", None),
    ("1 234", None),
    ("12,34", None),
    ("1,2345", None),
    ("", None),
    ("42 apples", None),
]


class TestNormalizeLabel:
    @pytest.mark.parametrize("raw,expected", INTEGER_TABLE)
    def test_integer_table(self, raw, expected):
        if expected is None:
            with pytest.raises(NormalizationError):
                normalize_label(raw, LabelKind.INTEGER)
        else:
            label = normalize_label(raw, LabelKind.INTEGER)
            assert label.kind is LabelKind.INTEGER
            assert label.value == expected

    @pytest.mark.parametrize(
        "raw,expected",
        [("(A)", "A"), (" B. ", "B"), ("c", "C"), ("[D]", "D"), ("'e'", "E"), ('"a"', "A")],
    )
    def test_choice_letter(self, raw, expected):
        assert normalize_label(raw, LabelKind.CHOICE_LETTER).value == expected

    @pytest.mark.parametrize("raw", ["F", "AB", "", "1", "(AB)"])
    def test_choice_letter_rejects(self, raw):
        with pytest.raises(NormalizationError):
            normalize_label(raw, LabelKind.CHOICE_LETTER)

    def test_nli_class(self):
        assert normalize_label(" Entailment ", LabelKind.NLI_CLASS).value == "entailment"
        assert normalize_label("NEUTRAL", LabelKind.NLI_CLASS).value == "neutral"
        with pytest.raises(NormalizationError):
            normalize_label("maybe", LabelKind.NLI_CLASS)
        with pytest.raises(NormalizationError):
            normalize_label("contradictions", LabelKind.NLI_CLASS)

    def test_free_text_trims_and_rejects_empty(self):
        assert normalize_label("  a summary  ", LabelKind.FREE_TEXT).value == "a summary"
        with pytest.raises(NormalizationError):
            normalize_label("   ", LabelKind.FREE_TEXT)

    def test_idempotent_whenever_first_call_succeeds(self):
        rng = random.Random(7)
        pool = [
            ("(B)", LabelKind.CHOICE_LETTER),
            ("Entailment", LabelKind.NLI_CLASS),
            ("1,234.", LabelKind.INTEGER),
            ("  dense summary text ", LabelKind.FREE_TEXT),
        ]
        for _ in range(50):
            raw, kind = rng.choice(pool)
            once = normalize_label(raw, kind)
            twice = normalize_label(str(once.value), kind)
            assert twice == once


class TestSampleAndDataset:
    def test_sample_rejects_unknown_keys(self):
        with pytest.raises(ValueError):
            Sample.from_dict({"id": "x", "input_fields": {}, "bonus": 1})

    def test_dataset_rejects_unknown_split(self):
        with pytest.raises(ValueError):
            Dataset(name="d", task=TaskKind.NLI, splits={"validation": ()})

    def test_validate_clean_nli_dataset(self):
        ds = Dataset(
            name="d", task=TaskKind.NLI, splits={"train": tuple(nli_sample(i) for i in range(3))}
        )
        assert validate_dataset(ds) == []

    def test_validate_flags_missing_required_field(self):
        bad = Sample(id="broken", input_fields={"premise": "only premise"})
        ds = Dataset(name="d", task=TaskKind.NLI, splits={"train": (nli_sample(0), bad)})
        report = validate_dataset(ds)
        assert len(report) == 1
        assert report[0].sample_id == "broken"
        assert "hypothesis" in report[0].detail

    def test_validate_flags_duplicate_id(self):
        q = Sample(
            id="q7",
            input_fields={"question": "?", "answer_choices": ["a", "b"]},
            gold_label=Label(LabelKind.CHOICE_LETTER, "A"),
        )
        ds = Dataset(name="d", task=TaskKind.QA, splits={"train": (q, q)})
        assert any(v.rule == "duplicate_id" for v in validate_dataset(ds))

    def test_validate_is_pure(self):
        bad = Sample(id="b", input_fields={})
        ds = Dataset(name="d", task=TaskKind.NLI, splits={"train": (bad,)})
        assert validate_dataset(ds) == validate_dataset(ds)


class TestJsonlIO:
    def test_round_trip_dataset(self, tmp_path):
        ds = Dataset(
            name="demo",
            task=TaskKind.NLI,
            splits={
                "train": tuple(nli_sample(i) for i in range(5)),
                "test": (nli_sample(99, gold="neutral"),),
            },
        )
        paths = write_dataset(ds, tmp_path)
        assert set(paths) == {"train", "test"}
        assert (tmp_path / "demo.train.jsonl").exists()
        back = read_dataset("demo", TaskKind.NLI, tmp_path)
        assert back == ds

    def test_split_file_shape(self, tmp_path):
        path = tmp_path / "d.train.jsonl"
        write_split([nli_sample(0)], path)
        row = json.loads(path.read_text().splitlines()[0])
        assert set(row) <= {"id", "input_fields", "gold_label", "synthetic_label"}

    def test_read_split_reports_line_number_on_garbage(self, tmp_path):
        path = tmp_path / "d.train.jsonl"
        path.write_text('{"id": "a", "input_fields": {}}\nnot json\n')
        with pytest.raises(ValueError, match="2"):
            read_split(path)


class TestDigests:
    def test_canonical_json_is_key_order_independent(self):
        assert canonical_json({"b": 1, "a": 2}) == canonical_json({"a": 2, "b": 1})
        assert digest_of({"b": 1, "a": 2}) == digest_of({"a": 2, "b": 1})

    def test_dataset_digests_change_with_content(self):
        ds1 = Dataset(name="d", task=TaskKind.NLI, splits={"train": (nli_sample(0),)})
        ds2 = Dataset(name="d", task=TaskKind.NLI, splits={"train": (nli_sample(1),)})
        assert dataset_digests(ds1) != dataset_digests(ds2)

    def test_same_content_same_digest(self):
        ds1 = Dataset(name="d", task=TaskKind.NLI, splits={"train": (nli_sample(0),)})
        ds2 = Dataset(name="e", task=TaskKind.NLI, splits={"train": (nli_sample(0),)})
        assert dataset_digests(ds1) == dataset_digests(ds2)


class TestRunManifest:
    def test_run_id_from_config_digest(self):
        digest = digest_of({"task": "nli"})
        manifest = RunManifest.for_config(digest)
        assert manifest.run_id == f"run-{digest[:12]}"

    def test_save_load_round_trip(self, tmp_path):
        manifest = RunManifest.for_config(digest_of({"x": 1}))
        manifest.record_stage("ingest", "k1", details={"splits": {"train": 3}})
        path = tmp_path / "manifest.json"
        manifest.save(path)
        back = RunManifest.load(path)
        assert back.stage_key("ingest") == "k1"
        assert back.stage_details("ingest") == {"splits": {"train": 3}}

    def test_artifact_digest_matches_file(self, tmp_path):
        manifest = RunManifest.for_config("0" * 64)
        artifact = tmp_path / "a.txt"
        artifact.write_text("payload")
        digest = manifest.record_artifact("a", artifact)
        from distillpipe.core import sha256_file

        assert digest == sha256_file(artifact)

    def test_incomplete_stage_key_is_none(self):
        manifest = RunManifest.for_config("0" * 64)
        manifest.record_stage("synthesize", "k", status="failed")
        assert manifest.stage_key("synthesize") is None


def test_label_round_trip():
    label = Label(LabelKind.INTEGER, -42)
    assert Label.from_dict(label.to_dict()) == label
