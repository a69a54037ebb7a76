"""Blind rating sessions.

A session deals every (sample, model) response to one rater in an order
fixed by a recorded seed. The rater only ever sees an opaque per-item id;
model identity is resolved back server-side at export time. Ratings are
written ahead to the event log, so restarting the service loses nothing.
"""

from __future__ import annotations

import random
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

from ..core import read_jsonl
from ..metrics import DuplicateRatingError, HumanRating, RangeError
from .store import EventLog

RATING_MIN = 1
RATING_MAX = 5
SCALE_DESCRIPTOR = {
    "min": RATING_MIN,
    "max": RATING_MAX,
    "min_label": "not helpful",
    "max_label": "very helpful",
}


class UnbalancedPoolError(ValueError):
    """Some model is missing a response for a sample another model covered."""


class UnknownItemError(KeyError):
    pass


class UnknownSessionError(KeyError):
    pass


@dataclass(frozen=True)
class PoolEntry:
    sample_id: str
    model: str
    query: str
    response: str
    chat_history: tuple[dict, ...] = ()

    @classmethod
    def from_dict(cls, d: dict) -> "PoolEntry":
        return cls(
            sample_id=str(d["sample_id"]),
            model=str(d["model"]),
            query=str(d["query"]),
            response=str(d["response"]),
            chat_history=tuple(d.get("chat_history") or ()),
        )


def load_pool(path: Path) -> list[PoolEntry]:
    return [PoolEntry.from_dict(row) for row in read_jsonl(Path(path))]


@dataclass(frozen=True)
class SessionItem:
    item_id: str
    sample_id: str
    model: str
    query: str
    response: str
    chat_history: tuple[dict, ...] = ()

    def wire_view(self) -> dict[str, Any]:
        """What the rater sees: never the model, sample id, or run metadata."""
        return {
            "item_id": self.item_id,
            "chat_history": [dict(t) for t in self.chat_history],
            "query": self.query,
            "response": self.response,
            "scale": dict(SCALE_DESCRIPTOR),
        }


@dataclass
class RatingSession:
    session_id: str
    rater_id: str
    seed: int
    items: list[SessionItem]
    ratings: dict[str, int] = field(default_factory=dict)

    @property
    def status(self) -> str:
        return "complete" if len(self.ratings) == len(self.items) else "open"

    def summary(self) -> dict[str, Any]:
        return {
            "session_id": self.session_id,
            "rater_id": self.rater_id,
            "rated": len(self.ratings),
            "total": len(self.items),
            "status": self.status,
        }


def _check_balanced(pool: Sequence[PoolEntry]) -> None:
    if not pool:
        raise UnbalancedPoolError("pool is empty")
    by_model: dict[str, set[str]] = {}
    for entry in pool:
        by_model.setdefault(entry.model, set()).add(entry.sample_id)
    reference_model, reference = next(iter(by_model.items()))
    for model, sample_ids in by_model.items():
        if sample_ids != reference:
            missing = reference - sample_ids
            extra = sample_ids - reference
            raise UnbalancedPoolError(
                f"model '{model}' does not cover the same samples as "
                f"'{reference_model}' (missing {sorted(missing)[:5]}, extra {sorted(extra)[:5]})"
            )


def _deal_items(pool: Sequence[PoolEntry], seed: int) -> list[SessionItem]:
    entries = list(pool)
    rng = random.Random(seed)
    rng.shuffle(entries)
    items = []
    for position, entry in enumerate(entries):
        # Opaque per-item alias: drawn from the seeded stream, so the order
        # and the ids are reproducible from (pool, seed) but carry no trace
        # of which model wrote the response.
        alias = f"it-{position:03d}{rng.getrandbits(24):06x}"
        items.append(
            SessionItem(
                item_id=alias,
                sample_id=entry.sample_id,
                model=entry.model,
                query=entry.query,
                response=entry.response,
                chat_history=entry.chat_history,
            )
        )
    return items


def next_item(session: RatingSession) -> SessionItem | None:
    for item in session.items:
        if item.item_id not in session.ratings:
            return item
    return None


class SessionStore:
    """All live sessions plus their write-ahead logs."""

    def __init__(self, log: EventLog):
        self._log = log
        self.sessions: dict[str, RatingSession] = {}
        for session_id, events in log.replay().items():
            self.sessions[session_id] = _session_from_events(events)

    def create_session(self, pool: Sequence[PoolEntry], rater_id: str, seed: int) -> RatingSession:
        _check_balanced(pool)
        session_id = f"sess-{len(self.sessions) + 1:04d}-{seed}"
        while session_id in self.sessions:
            session_id += "x"
        items = _deal_items(pool, seed)
        self._log.append(
            session_id,
            {
                "type": "session_created",
                "at": time.time(),
                "session_id": session_id,
                "rater_id": rater_id,
                "seed": seed,
                "items": [
                    {
                        "item_id": item.item_id,
                        "sample_id": item.sample_id,
                        "model": item.model,
                        "query": item.query,
                        "response": item.response,
                        "chat_history": list(item.chat_history),
                    }
                    for item in items
                ],
            },
        )
        session = RatingSession(session_id=session_id, rater_id=rater_id, seed=seed, items=items)
        self.sessions[session_id] = session
        return session

    def get(self, session_id: str) -> RatingSession:
        if session_id not in self.sessions:
            raise UnknownSessionError(f"no session '{session_id}'")
        return self.sessions[session_id]

    def submit_rating(self, session_id: str, item_id: str, value: int) -> RatingSession:
        session = self.get(session_id)
        if not isinstance(value, int) or isinstance(value, bool):
            raise RangeError(f"rating must be an integer in [{RATING_MIN}, {RATING_MAX}]")
        if not RATING_MIN <= value <= RATING_MAX:
            raise RangeError(f"rating {value} outside [{RATING_MIN}, {RATING_MAX}]")
        if item_id not in {item.item_id for item in session.items}:
            raise UnknownItemError(f"no item '{item_id}' in session '{session_id}'")
        if item_id in session.ratings:
            raise DuplicateRatingError(f"item '{item_id}' already rated")
        self._log.append(
            session_id,
            {"type": "rating_submitted", "at": time.time(), "item_id": item_id, "value": value},
        )
        session.ratings[item_id] = value
        return session


def _session_from_events(events: list[dict]) -> RatingSession:
    if not events or events[0]["type"] != "session_created":
        raise ValueError("session log must start with a session_created event")
    created = events[0]
    items = [
        SessionItem(
            item_id=item["item_id"],
            sample_id=item["sample_id"],
            model=item["model"],
            query=item["query"],
            response=item["response"],
            chat_history=tuple(item.get("chat_history") or ()),
        )
        for item in created["items"]
    ]
    session = RatingSession(
        session_id=created["session_id"],
        rater_id=created["rater_id"],
        seed=created["seed"],
        items=items,
    )
    for event in events[1:]:
        if event["type"] == "rating_submitted":
            session.ratings[event["item_id"]] = event["value"]
    return session


def export_sessions(
    sessions: Iterable[RatingSession],
    include_partial: bool = False,
    rater_id: str | None = None,
) -> list[dict[str, Any]]:
    """De-anonymized session records for aggregation (server-side only)."""
    exported = []
    for session in sessions:
        if rater_id is not None and session.rater_id != rater_id:
            continue
        if session.status != "complete" and not include_partial:
            continue
        ratings = []
        for item in session.items:
            if item.item_id in session.ratings:
                ratings.append(
                    {
                        "sample_id": item.sample_id,
                        "model": item.model,
                        "value": session.ratings[item.item_id],
                    }
                )
        exported.append(
            {
                "session_id": session.session_id,
                "rater_id": session.rater_id,
                "seed": session.seed,
                "status": session.status,
                "ratings": ratings,
            }
        )
    return exported


def human_ratings(exported: Iterable[dict[str, Any]]) -> list[HumanRating]:
    """Adapt exported sessions to the shape aggregate_human_ratings takes."""
    return [
        HumanRating(
            rater_id=session["rater_id"],
            model_id=rating["model"],
            item_id=rating["sample_id"],
            value=rating["value"],
        )
        for session in exported
        for rating in session["ratings"]
    ]
