"""Append-only event storage for rating sessions.

One JSONL file per session; every event is flushed to disk before the
in-memory state changes, so a crash between request and response can lose at
most an acknowledgement, never a recorded rating. Startup replays all logs.
"""

from __future__ import annotations

import json
import os
from pathlib import Path


class EventLog:
    def __init__(self, directory: Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def _path(self, session_id: str) -> Path:
        return self.directory / f"{session_id}.jsonl"

    def append(self, session_id: str, event: dict) -> None:
        """Write-ahead: the event is on disk (flushed and fsynced) before
        this returns."""
        with self._path(session_id).open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(event, ensure_ascii=False) + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def replay(self) -> dict[str, list[dict]]:
        """All persisted events, per session, in append order."""
        logs: dict[str, list[dict]] = {}
        for path in sorted(self.directory.glob("*.jsonl")):
            events = []
            with path.open("r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if line:
                        events.append(json.loads(line))
            logs[path.stem] = events
        return logs

    def session_count(self) -> int:
        return sum(1 for _ in self.directory.glob("*.jsonl"))
