"""Blind human-rating service: sessions, crash-safe storage, HTTP API."""

from .sessions import (
    PoolEntry,
    RatingSession,
    SessionItem,
    SessionStore,
    UnbalancedPoolError,
    UnknownItemError,
    export_sessions,
    load_pool,
    next_item,
)

__all__ = [
    "PoolEntry",
    "RatingSession",
    "SessionItem",
    "SessionStore",
    "UnbalancedPoolError",
    "UnknownItemError",
    "export_sessions",
    "load_pool",
    "next_item",
]
