"""Single-file append-only store and a bounded background job pool.

Every write appends one JSON line {kind, id, created_at, ...payload}; the
in-memory index keeps the latest record per (kind, id), so an "update" is
just another append and the full history stays inspectable in the file.
Adequate for desk scale, trivially auditable.
"""

from __future__ import annotations

import json
import queue
import threading
import uuid
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable


class AppendOnlyStore:
    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._index: dict[tuple[str, str], dict] = {}
        if self.path.exists():
            with open(self.path, encoding="utf-8") as handle:
                for line in handle:
                    line = line.strip()
                    if not line:
                        continue
                    record = json.loads(line)
                    self._index[(record["kind"], record["id"])] = record
        else:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.touch()

    def append(self, kind: str, payload: dict, record_id: str | None = None) -> dict:
        record = dict(payload)
        record["kind"] = kind
        record["id"] = record_id or uuid.uuid4().hex
        record.setdefault("created_at",
                          datetime.now(timezone.utc).isoformat(timespec="seconds"))
        line = json.dumps(record, sort_keys=True)
        with self._lock:
            with open(self.path, "a", encoding="utf-8") as handle:
                handle.write(line + "\n")
            self._index[(kind, record["id"])] = record
        return record

    def get(self, kind: str, record_id: str) -> dict | None:
        with self._lock:
            return self._index.get((kind, record_id))

    def list(self, kind: str, **filters: Any) -> list[dict]:
        with self._lock:
            records = [r for (k, _), r in self._index.items() if k == kind]
        records = [r for r in records
                   if all(r.get(key) == value for key, value in filters.items())]
        records.sort(key=lambda r: (r.get("created_at", ""), r["id"]))
        return records

    def snapshot(self) -> bytes:
        """Raw file contents; handy for asserting reads mutate nothing."""
        with self._lock:
            return self.path.read_bytes()


class JobQueue:
    """Fixed pool of worker threads executing submitted callables; job state
    lives in the store as appended status records."""

    def __init__(self, store: AppendOnlyStore, workers: int = 2):
        self.store = store
        self._queue: queue.Queue[tuple[str, Callable[[], dict]]] = queue.Queue()
        self._threads = [
            threading.Thread(target=self._worker, daemon=True, name=f"job-worker-{k}")
            for k in range(workers)
        ]
        for thread in self._threads:
            thread.start()

    def submit(self, fn: Callable[[], dict]) -> str:
        record = self.store.append("job", {"status": "queued"})
        self._queue.put((record["id"], fn))
        return record["id"]

    def _worker(self) -> None:
        while True:
            job_id, fn = self._queue.get()
            self.store.append("job", {"status": "running"}, record_id=job_id)
            try:
                result = fn()
            except Exception as exc:   # job errors land in the record, not the log
                self.store.append(
                    "job", {"status": "failed", "error": str(exc)}, record_id=job_id)
            else:
                self.store.append(
                    "job", {"status": "done", "result": result}, record_id=job_id)
            finally:
                self._queue.task_done()

    def wait_idle(self) -> None:
        self._queue.join()
