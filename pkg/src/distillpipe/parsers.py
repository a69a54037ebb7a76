"""Parsers that turn raw teacher/judge completions into structured values.

Repair of near-JSON output is deliberately conservative: strip fences and
slice to the outermost bracket pair, never edit characters inside. A failed
parse is surfaced as an error carrying an excerpt for run reports.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass


class ParseError(ValueError):
    """Structured completion could not be parsed.

    kind is one of: malformed, wrong_length, missing_key.
    """

    def __init__(self, kind: str, message: str, excerpt: str = ""):
        self.kind = kind
        self.excerpt = excerpt[:200]
        super().__init__(f"{kind}: {message}" + (f" | excerpt: {self.excerpt!r}" if excerpt else ""))


class RatingParseError(ValueError):
    """No usable rating found in a judge completion."""


@dataclass(frozen=True)
class CodStep:
    missing_entities: str
    denser_summary: str


@dataclass(frozen=True)
class CodChain:
    steps: tuple[CodStep, ...]

    def summary_at(self, step: int) -> str:
        if not 1 <= step <= len(self.steps):
            raise ValueError(f"step must be in 1..{len(self.steps)}, got {step}")
        return self.steps[step - 1].denser_summary


@dataclass(frozen=True)
class CotAnswer:
    reason: str
    label_raw: str


_FENCE_OPEN = re.compile(r"^```[A-Za-z0-9_-]*[ \t]*\r?\n")


def repair_json(raw: str) -> str:
    """Best-effort extraction of a JSON payload from decorated model output.

    Pipeline: trim whitespace, drop a single enclosing markdown fence, slice
    from the first '[' or '{' to the last matching closer. Characters inside
    the slice are never edited; with no bracket the text passes through.
    """
    text = raw.strip()

    fence = _FENCE_OPEN.match(text)
    if fence:
        body = text[fence.end():]
        if body.rstrip().endswith("```"):
            body = body.rstrip()[: -len("```")]
        text = body.strip()

    openers = [(text.find("["), "]"), (text.find("{"), "}")]
    openers = [(i, closer) for i, closer in openers if i != -1]
    if not openers:
        return text
    start, closer = min(openers)
    end = text.rfind(closer)
    if end <= start:
        return text
    return text[start : end + 1]


def parse_cod(raw: str) -> CodChain:
    """Parse a 4-step chain of increasingly dense summaries.

    Key spellings are case-sensitive: "Missing_Entities" / "Denser_Summary".
    """
    candidate = repair_json(raw)
    try:
        data = json.loads(candidate)
    except json.JSONDecodeError as exc:
        raise ParseError("malformed", f"not valid JSON ({exc.msg})", candidate) from exc
    if not isinstance(data, list):
        raise ParseError("malformed", f"expected a JSON array, got {type(data).__name__}", candidate)
    if len(data) != 4:
        raise ParseError("wrong_length", f"expected 4 steps, got {len(data)}", candidate)
    steps = []
    for i, item in enumerate(data):
        if not isinstance(item, dict):
            raise ParseError("malformed", f"step {i + 1} is not an object", candidate)
        for key in ("Missing_Entities", "Denser_Summary"):
            if key not in item:
                raise ParseError("missing_key", f"step {i + 1} lacks '{key}'", candidate)
        summary = item["Denser_Summary"]
        if not isinstance(summary, str) or not summary.strip():
            raise ParseError("missing_key", f"step {i + 1} has empty 'Denser_Summary'", candidate)
        steps.append(CodStep(str(item["Missing_Entities"]), summary))
    return CodChain(steps=tuple(steps))


def parse_cot(raw: str, label_key: str = "answer") -> CotAnswer:
    """Parse a reasoning completion into (reason, raw label).

    label_key is 'answer' for numeric tasks, 'answer_choice' for
    multiple-choice and NLI. Numeric label values are stringified; extra
    keys are ignored.
    """
    if label_key not in ("answer", "answer_choice"):
        raise ValueError(f"label_key must be 'answer' or 'answer_choice', got {label_key!r}")
    candidate = repair_json(raw)
    try:
        data = json.loads(candidate)
    except json.JSONDecodeError as exc:
        raise ParseError("malformed", f"not valid JSON ({exc.msg})", candidate) from exc
    if not isinstance(data, dict):
        raise ParseError("malformed", f"expected a JSON object, got {type(data).__name__}", candidate)
    if "reason" not in data:
        raise ParseError("missing_key", "missing 'reason'", candidate)
    if label_key not in data:
        raise ParseError("missing_key", f"missing '{label_key}'", candidate)
    label_raw = data[label_key]
    if isinstance(label_raw, bool) or label_raw is None:
        raise ParseError("malformed", f"'{label_key}' is {label_raw!r}", candidate)
    if isinstance(label_raw, (int, float)):
        label_raw = format(label_raw, "g") if isinstance(label_raw, float) else str(label_raw)
    if not str(label_raw).strip():
        raise ParseError("missing_key", f"'{label_key}' is empty", candidate)
    return CotAnswer(reason=str(data["reason"]), label_raw=str(label_raw))


_INT_LINE = re.compile(r"^[+-]?\d+$")


def parse_rating(raw: str, lo: int, hi: int) -> int:
    """Return the rating repeated on its own line at the end of a judge output.

    Lines are scanned bottom-up; the first line that is exactly an integer in
    [lo, hi] wins. Integers mentioned inside prose never qualify.
    """
    if lo > hi:
        raise ValueError(f"lo must be <= hi, got [{lo}, {hi}]")
    for line in reversed(raw.splitlines()):
        line = line.strip()
        if _INT_LINE.match(line):
            value = int(line)
            if lo <= value <= hi:
                return value
    raise RatingParseError(f"no standalone integer in [{lo}, {hi}] found")


_DIFFICULTY_PHRASE = re.compile(r"overall difficulty score", re.IGNORECASE)


def parse_difficulty(raw: str) -> int:
    """Extract the final difficulty score (1-5) from a complexity judgement.

    The first integer after the last "Overall Difficulty Score" mention wins;
    without the phrase, fall back to the standalone-line rating rule.
    """
    last = None
    for match in _DIFFICULTY_PHRASE.finditer(raw):
        last = match
    if last is None:
        return parse_rating(raw, 1, 5)
    tail = raw[last.end():]
    number = re.search(r"\d+", tail)
    if number is None:
        raise RatingParseError("no score after 'Overall Difficulty Score'")
    value = int(number.group())
    if not 1 <= value <= 5:
        raise RatingParseError(f"difficulty score {value} outside [1, 5]")
    return value
