"""Watched-directory ingestion agent.

Scans a local directory on a cron schedule and uploads new or changed files
through the chunked upload API.  A dedupe ledger of (path, size, mtime,
digest) prevents re-uploading unchanged files; actively growing files get a
fresh version for the same project name on every change.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Optional

import httpx

from .cron import CronExpr
from .model import canonical_json

log = logging.getLogger("cyclebench.watcher")


@dataclass
class WatchConfig:
    directory: Path
    globs: list[str] = field(default_factory=lambda: ["*"])
    schedule: str = "0 5 * * *"
    ledger_path: Optional[Path] = None
    project_name: Optional[str] = None  # default: file stem
    recursive: bool = False


class UploadClient:
    """Chunk-API client with retry/backoff on transient failures."""

    def __init__(self, base_url: str, api_key: str,
                 chunk_size: int = 8 * 1024 * 1024, retries: int = 3,
                 backoff: float = 0.5, transport: Optional[object] = None):
        self.base_url = base_url.rstrip("/")
        self.chunk_size = chunk_size
        self.retries = retries
        self.backoff = backoff
        self._client = httpx.Client(
            base_url=self.base_url,
            headers={"Authorization": f"Bearer {api_key}"},
            timeout=60.0,
            transport=transport,
        )

    def close(self) -> None:
        self._client.close()

    def _request(self, method: str, url: str, **kwargs) -> httpx.Response:
        last: Optional[Exception] = None
        for attempt in range(self.retries):
            try:
                response = self._client.request(method, url, **kwargs)
                if response.status_code >= 500:
                    raise httpx.HTTPStatusError(
                        f"server error {response.status_code}",
                        request=response.request, response=response)
                return response
            except (httpx.TransportError, httpx.HTTPStatusError) as exc:
                last = exc
                time.sleep(self.backoff * (2 ** attempt))
        raise RuntimeError(f"{method} {url} failed after "
                           f"{self.retries} attempts: {last}")

    def upload_file(self, path: Path, project_name: str,
                    metadata: Optional[dict] = None) -> dict:
        data = path.read_bytes()
        declare = self._request("POST", "/api/uploads", json={
            "file_name": path.name,
            "project_name": project_name,
            "declared_size": len(data),
            "chunk_size": self.chunk_size,
            "metadata": metadata or {},
        })
        declare.raise_for_status()
        doc = declare.json()
        upload_id = doc["upload_id"]
        chunk_size = doc["chunk_size"]
        for n in range(doc["n_chunks"]):
            chunk = data[n * chunk_size:(n + 1) * chunk_size]
            digest = hashlib.sha256(chunk).hexdigest()
            put = self._request(
                "PUT", f"/api/uploads/{upload_id}/chunks/{n}",
                params={"digest": digest},
                content=chunk,
                headers={"Content-Type": "application/octet-stream"},
            )
            put.raise_for_status()
        complete = self._request("POST", f"/api/uploads/{upload_id}/complete")
        complete.raise_for_status()
        return complete.json()


def file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


class Watcher:
    def __init__(self, cfg: WatchConfig, client: UploadClient):
        self.cfg = cfg
        self.client = client
        self.cron = CronExpr.parse(cfg.schedule)
        self.ledger_path = cfg.ledger_path or (
            Path(cfg.directory) / ".cyclebench-ledger.json")
        self.ledger: dict[str, dict] = {}
        if self.ledger_path.exists():
            self.ledger = json.loads(self.ledger_path.read_text("utf-8"))

    def _save_ledger(self) -> None:
        tmp = self.ledger_path.with_suffix(".tmp")
        tmp.write_text(canonical_json(self.ledger), "utf-8")
        tmp.replace(self.ledger_path)

    def _candidates(self) -> list[Path]:
        base = Path(self.cfg.directory)
        out: set[Path] = set()
        for pattern in self.cfg.globs:
            matches = base.rglob(pattern) if self.cfg.recursive \
                else base.glob(pattern)
            for path in matches:
                if path.is_file() and path != self.ledger_path:
                    out.add(path)
        return sorted(out)

    def scan_once(self) -> list[dict]:
        """One scan-and-upload pass; returns the upload results."""
        uploaded = []
        for path in self._candidates():
            key = str(path)
            stat = path.stat()
            entry = self.ledger.get(key)
            if entry and entry["size"] == stat.st_size \
                    and entry["mtime"] == stat.st_mtime:
                continue
            digest = file_digest(path)
            if entry and entry["digest"] == digest:
                # touched but unchanged: refresh stat, skip upload
                self.ledger[key] = {"size": stat.st_size,
                                    "mtime": stat.st_mtime, "digest": digest}
                self._save_ledger()
                continue
            project_name = self.cfg.project_name or path.stem
            try:
                result = self.client.upload_file(path, project_name)
            except Exception as exc:
                log.error("upload of %s failed: %s", path, exc)
                continue
            self.ledger[key] = {"size": stat.st_size, "mtime": stat.st_mtime,
                                "digest": digest}
            self._save_ledger()
            uploaded.append(result)
            log.info("uploaded %s -> job %s", path, result.get("job_id"))
        return uploaded

    def run(self, once: bool = False, now_fn=datetime.now,
            sleep_fn=time.sleep) -> None:
        """Scheduler loop; scan errors are logged and never fatal."""
        if once:
            self.scan_once()
            return
        while True:
            next_tick = self.cron.next_after(now_fn())
            wait = (next_tick - now_fn()).total_seconds()
            if wait > 0:
                sleep_fn(wait)
            try:
                self.scan_once()
            except Exception as exc:
                log.error("scan failed: %s", exc)
