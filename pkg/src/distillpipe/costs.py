"""Inference cost model: per-1k-sample cost, teacher/student break-even,
and a fallback token estimator for providers that omit usage counts.

All currency arithmetic is exact decimal fixed-point; rounding to cents
happens only when formatting for display.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from decimal import ROUND_CEILING, ROUND_HALF_UP, Decimal
from pathlib import Path

CENTS = Decimal("0.01")


class NoBreakevenError(ValueError):
    """Student inference is not cheaper per sample than teacher inference."""


def _as_decimal(value) -> Decimal:
    # Floats go through str() so a price typed as 0.00533 stays 0.00533
    # rather than picking up binary representation noise.
    if isinstance(value, Decimal):
        return value
    if isinstance(value, float):
        return Decimal(str(value))
    return Decimal(value)


@dataclass(frozen=True)
class CostScenario:
    input_doc_tokens: int
    prompt_tokens: int
    output_tokens: int
    price_in_per_1k: Decimal
    price_out_per_1k: Decimal
    samples: int = 1000

    def __post_init__(self) -> None:
        object.__setattr__(self, "price_in_per_1k", _as_decimal(self.price_in_per_1k))
        object.__setattr__(self, "price_out_per_1k", _as_decimal(self.price_out_per_1k))
        for name in ("input_doc_tokens", "prompt_tokens", "output_tokens", "samples"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.price_in_per_1k < 0 or self.price_out_per_1k < 0:
            raise ValueError("prices must be nonnegative")

    @classmethod
    def from_dict(cls, d: dict) -> "CostScenario":
        return cls(
            input_doc_tokens=int(d["input_doc_tokens"]),
            prompt_tokens=int(d["prompt_tokens"]),
            output_tokens=int(d["output_tokens"]),
            price_in_per_1k=_as_decimal(d["price_in_per_1k"]),
            price_out_per_1k=_as_decimal(d["price_out_per_1k"]),
            samples=int(d.get("samples", 1000)),
        )


def cost_per_sample(s: CostScenario) -> Decimal:
    thousand = Decimal(1000)
    input_tokens = Decimal(s.input_doc_tokens + s.prompt_tokens)
    return (
        input_tokens / thousand * s.price_in_per_1k
        + Decimal(s.output_tokens) / thousand * s.price_out_per_1k
    )


def cost_per_1k(s: CostScenario) -> Decimal:
    """Exact cost of running 1000 samples through the priced endpoint."""
    return Decimal(1000) * cost_per_sample(s)


def display_cents(amount: Decimal) -> str:
    return str(amount.quantize(CENTS, rounding=ROUND_HALF_UP))


def breakeven(teacher: CostScenario, student: CostScenario, onetime_cost) -> int:
    """Smallest sample count n where the per-sample saving of serving the
    distilled student has paid back the one-time synthesis + fine-tune cost:
    n * (teacher_per_sample - student_per_sample) >= onetime_cost.
    """
    onetime = _as_decimal(onetime_cost)
    saving = cost_per_sample(teacher) - cost_per_sample(student)
    if saving <= 0:
        raise NoBreakevenError(
            f"student per-sample cost {cost_per_sample(student)} is not below "
            f"teacher per-sample cost {cost_per_sample(teacher)}"
        )
    if onetime <= 0:
        return 0
    return int((onetime / saving).to_integral_value(rounding=ROUND_CEILING))


def estimate_tokens(text: str) -> int:
    """Deterministic stand-in for provider usage counts: ceil(len/4)."""
    return math.ceil(len(text) / 4)


def load_scenarios(path: Path) -> dict[str, CostScenario]:
    """Scenario file: JSON array of {"name": ..., <CostScenario fields>}."""
    entries = json.loads(Path(path).read_text(encoding="utf-8"))
    scenarios: dict[str, CostScenario] = {}
    for entry in entries:
        name = entry["name"]
        if name in scenarios:
            raise ValueError(f"duplicate scenario name '{name}'")
        scenarios[name] = CostScenario.from_dict(entry)
    return scenarios


def comparison_table(scenarios: dict[str, CostScenario]) -> str:
    """Plain-text cost comparison, one row per scenario, cents at display only."""
    rows = [(name, display_cents(cost_per_1k(s))) for name, s in scenarios.items()]
    name_width = max(len("Scenario"), *(len(n) for n, _ in rows)) if rows else len("Scenario")
    cost_width = max(len("Cost per 1k samples ($)"), *(len(c) for _, c in rows)) if rows else 0
    lines = [f"{'Scenario':<{name_width}}  {'Cost per 1k samples ($)':>{cost_width}}"]
    lines.append(f"{'-' * name_width}  {'-' * cost_width}")
    for name, cost in rows:
        lines.append(f"{name:<{name_width}}  {cost:>{cost_width}}")
    return "\n".join(lines)
