"""HTTP API for the blind rating workflow.

Rater-facing endpoints (session create/next/rate/summary) never carry model
names; the export endpoint resolves aliases back to models and is meant for
the experimenter. All error bodies are ``{"code", "message"}``.
"""

from __future__ import annotations

import logging
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from ..metrics import DuplicateRatingError, RangeError, aggregate_human_ratings
from .sessions import (
    SessionStore,
    UnbalancedPoolError,
    UnknownItemError,
    UnknownSessionError,
    export_sessions,
    human_ratings,
    load_pool,
    next_item,
)
from .store import EventLog

logger = logging.getLogger(__name__)


class CreateSessionRequest(BaseModel):
    pool: str
    rater_id: str
    seed: int


class SubmitRatingRequest(BaseModel):
    item_id: str
    value: int


def _error(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"code": code, "message": message})


_ERROR_STATUS = {
    UnknownSessionError: (404, "unknown_session"),
    UnknownItemError: (404, "unknown_item"),
    UnbalancedPoolError: (400, "unbalanced_pool"),
    RangeError: (400, "rating_out_of_range"),
    DuplicateRatingError: (409, "duplicate_rating"),
    FileNotFoundError: (404, "unknown_pool"),
}


def create_app(data_dir: Path, ui_dir: Path | None = None) -> FastAPI:
    """Service over a data directory: ``pools/`` holds rating pools
    (``<name>.jsonl``), ``sessions/`` holds the per-session event logs."""
    data_dir = Path(data_dir)
    pools_dir = data_dir / "pools"
    store = SessionStore(EventLog(data_dir / "sessions"))

    app = FastAPI(title="blind rating service")

    @app.exception_handler(Exception)
    async def handle_known(request: Request, exc: Exception):
        for exc_type, (status, code) in _ERROR_STATUS.items():
            if isinstance(exc, exc_type):
                return _error(status, code, str(exc))
        logger.exception("unhandled error serving %s", request.url.path)
        return _error(500, "internal_error", str(exc))

    @app.post("/sessions", status_code=201)
    def create_session(body: CreateSessionRequest):
        pool_path = pools_dir / f"{body.pool}.jsonl"
        if not pool_path.exists():
            return _error(404, "unknown_pool", f"no pool named '{body.pool}'")
        pool = load_pool(pool_path)
        try:
            session = store.create_session(pool, body.rater_id, body.seed)
        except UnbalancedPoolError as exc:
            return _error(400, "unbalanced_pool", str(exc))
        return session.summary()

    @app.get("/sessions/{session_id}/next")
    def get_next(session_id: str):
        try:
            session = store.get(session_id)
        except UnknownSessionError as exc:
            return _error(404, "unknown_session", str(exc))
        item = next_item(session)
        if item is None:
            return {"done": True, **session.summary()}
        return {"done": False, "progress": session.summary(), "item": item.wire_view()}

    @app.post("/sessions/{session_id}/ratings")
    def submit(session_id: str, body: SubmitRatingRequest):
        try:
            session = store.submit_rating(session_id, body.item_id, body.value)
        except UnknownSessionError as exc:
            return _error(404, "unknown_session", str(exc))
        except UnknownItemError as exc:
            return _error(404, "unknown_item", str(exc))
        except RangeError as exc:
            return _error(400, "rating_out_of_range", str(exc))
        except DuplicateRatingError as exc:
            return _error(409, "duplicate_rating", str(exc))
        return session.summary()

    @app.get("/sessions/{session_id}/summary")
    def summary(session_id: str):
        try:
            return store.get(session_id).summary()
        except UnknownSessionError as exc:
            return _error(404, "unknown_session", str(exc))

    @app.get("/export")
    def export(include_partial: bool = False, rater_id: str | None = None):
        exported = export_sessions(
            store.sessions.values(), include_partial=include_partial, rater_id=rater_id
        )
        aggregate = {
            model: {"per_rater": stats["per_rater"], "overall": stats["overall"]}
            for model, stats in aggregate_human_ratings(human_ratings(exported)).items()
        }
        return {"sessions": exported, "aggregate": aggregate}

    if ui_dir is not None and Path(ui_dir).is_dir():
        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
