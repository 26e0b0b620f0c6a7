"""In-process parse-job queue with a persistent journal.

Jobs move Queued -> Running -> Succeeded | Failed, never backwards.  The
journal is rewritten atomically on every transition so a restarted service
re-queues work that never finished.
"""

from __future__ import annotations

import json
import logging
import queue
import threading
import uuid
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

from ..model import canonical_json, utcnow_iso

log = logging.getLogger("cyclebench.jobs")

_VALID_TRANSITIONS = {
    "Queued": {"Running"},
    "Running": {"Succeeded", "Failed"},
    "Succeeded": set(),
    "Failed": set(),
}


@dataclass
class ParseJob:
    job_id: str
    project_id: str
    file_name: str
    state: str = "Queued"
    error: str = ""
    created_at: str = ""
    started_at: Optional[str] = None
    finished_at: Optional[str] = None
    result_project_ids: list[str] = field(default_factory=list)


class JobQueue:
    """Bounded worker pool draining a journaled FIFO of parse jobs."""

    def __init__(self, journal_path: Path | str,
                 runner: Callable[[ParseJob], list[str]],
                 workers: int = 2):
        self.journal_path = Path(journal_path)
        self.runner = runner
        self.n_workers = max(1, workers)
        self._lock = threading.Lock()
        self._jobs: dict[str, ParseJob] = {}
        self._queue: "queue.Queue[str]" = queue.Queue()
        self._threads: list[threading.Thread] = []
        self._stop = threading.Event()
        self._load()

    def _load(self) -> None:
        if not self.journal_path.exists():
            return
        for line in self.journal_path.read_text("utf-8").splitlines():
            if line.strip():
                job = ParseJob(**json.loads(line))
                self._jobs[job.job_id] = job

    def _flush(self) -> None:
        lines = [canonical_json(asdict(j))
                 for j in sorted(self._jobs.values(), key=lambda j: j.created_at)]
        self.journal_path.parent.mkdir(parents=True, exist_ok=True)
        tmp = self.journal_path.with_suffix(".tmp")
        tmp.write_text("\n".join(lines) + ("\n" if lines else ""), "utf-8")
        tmp.replace(self.journal_path)

    def start(self) -> None:
        # interrupted jobs never reached a terminal state: run them again
        with self._lock:
            for job in self._jobs.values():
                if job.state == "Running":
                    job.state = "Queued"
                    job.started_at = None
            self._flush()
            pending = [j.job_id for j in sorted(self._jobs.values(),
                                                key=lambda j: j.created_at)
                       if j.state == "Queued"]
        for job_id in pending:
            self._queue.put(job_id)
        for i in range(self.n_workers):
            t = threading.Thread(target=self._worker, name=f"job-worker-{i}",
                                 daemon=True)
            t.start()
            self._threads.append(t)

    def stop(self) -> None:
        self._stop.set()
        for _ in self._threads:
            self._queue.put("")
        for t in self._threads:
            t.join(timeout=5)
        self._threads.clear()

    def submit(self, project_id: str, file_name: str) -> ParseJob:
        job = ParseJob(
            job_id=uuid.uuid4().hex,
            project_id=project_id,
            file_name=file_name,
            created_at=utcnow_iso(),
        )
        with self._lock:
            self._jobs[job.job_id] = job
            self._flush()
        self._queue.put(job.job_id)
        return job

    def get(self, job_id: str) -> Optional[ParseJob]:
        with self._lock:
            job = self._jobs.get(job_id)
            return ParseJob(**asdict(job)) if job else None

    def for_project(self, project_id: str) -> list[ParseJob]:
        with self._lock:
            return [ParseJob(**asdict(j)) for j in self._jobs.values()
                    if j.project_id == project_id]

    def _transition(self, job_id: str, state: str, **changes) -> None:
        with self._lock:
            job = self._jobs[job_id]
            if state not in _VALID_TRANSITIONS[job.state]:
                raise ValueError(f"illegal job transition {job.state} -> {state}")
            job.state = state
            for key, value in changes.items():
                setattr(job, key, value)
            self._flush()

    def _worker(self) -> None:
        while not self._stop.is_set():
            job_id = self._queue.get()
            if not job_id:
                continue
            with self._lock:
                job = self._jobs.get(job_id)
                if job is None or job.state != "Queued":
                    continue
            self._transition(job_id, "Running", started_at=utcnow_iso())
            try:
                created = self.runner(self.get(job_id))
            except Exception as exc:  # job failures are data, not crashes
                log.warning("job %s failed: %s", job_id, exc)
                self._transition(job_id, "Failed", error=str(exc),
                                 finished_at=utcnow_iso())
                continue
            self._transition(job_id, "Succeeded", finished_at=utcnow_iso(),
                             result_project_ids=created)

    def wait_all(self, timeout: float = 60.0) -> bool:
        """Block until no job is Queued or Running (test helper)."""
        import time
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            with self._lock:
                busy = any(j.state in ("Queued", "Running")
                           for j in self._jobs.values())
            if not busy:
                return True
            time.sleep(0.02)
        return False
