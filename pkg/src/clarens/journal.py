"""Append-only JSON-lines journal used to persist ACLs, groups, replica stats and job states."""

from __future__ import annotations

import json
import logging
import os
import threading
from pathlib import Path
from typing import Any, Iterator

log = logging.getLogger(__name__)


class Journal:
    """One JSON object per line.  Every record carries a ``kind`` field.

    A ``None`` path gives a journal that records nothing, so callers never
    need to branch on whether persistence is configured.
    """

    def __init__(self, path: str | os.PathLike | None):
        self.path = Path(path) if path is not None else None
        self._lock = threading.Lock()
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)

    def append(self, kind: str, **fields: Any) -> None:
        if self.path is None:
            return
        line = json.dumps({"kind": kind, **fields}, sort_keys=True, separators=(",", ":"))
        with self._lock, open(self.path, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")
            fh.flush()

    def replay(self, *kinds: str) -> Iterator[dict]:
        """Yield stored records (optionally only those of the given kinds), skipping torn lines."""
        if self.path is None or not self.path.exists():
            return
        with open(self.path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    rec = json.loads(line)
                except ValueError:
                    log.warning("journal %s:%d unreadable, skipped", self.path, lineno)
                    continue
                if not kinds or rec.get("kind") in kinds:
                    yield rec
