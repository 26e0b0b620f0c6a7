"""Chunked upload sessions.

Files are split into fixed-size chunks so large uploads survive flaky
connections; chunks may arrive in any order and are spooled to disk.  A
session is complete once every chunk is present, the per-chunk digests
verify, and the reassembled size equals the declared size.
"""

from __future__ import annotations

import hashlib
import math
import shutil
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from ..model import utcnow_iso

DEFAULT_CHUNK_SIZE = 8 * 1024 * 1024


@dataclass
class UploadSession:
    session_id: str
    file_name: str
    project_name: str
    declared_size: int
    chunk_size: int
    user_id: str
    metadata: dict = field(default_factory=dict)
    created_at: str = ""
    chunk_digests: dict[int, str] = field(default_factory=dict)
    chunk_sizes: dict[int, int] = field(default_factory=dict)

    @property
    def n_chunks(self) -> int:
        return max(1, math.ceil(self.declared_size / self.chunk_size))

    @property
    def received(self) -> list[bool]:
        return [n in self.chunk_digests for n in range(self.n_chunks)]

    @property
    def complete(self) -> bool:
        return (all(self.received)
                and sum(self.chunk_sizes.values()) == self.declared_size)


class ChunkConflict(Exception):
    """Chunk re-sent with different content than previously stored."""


class DigestMismatch(Exception):
    """Declared chunk digest does not match the received body."""


class UploadManager:
    def __init__(self, spool_dir: Path | str,
                 chunk_size: int = DEFAULT_CHUNK_SIZE):
        self.spool_dir = Path(spool_dir)
        self.spool_dir.mkdir(parents=True, exist_ok=True)
        self.chunk_size = chunk_size
        self._lock = threading.Lock()
        self._sessions: dict[str, UploadSession] = {}

    def declare(self, file_name: str, project_name: str, declared_size: int,
                user_id: str, metadata: Optional[dict] = None,
                chunk_size: Optional[int] = None) -> UploadSession:
        if declared_size <= 0:
            raise ValueError("declared_size must be positive")
        session = UploadSession(
            session_id=uuid.uuid4().hex,
            file_name=file_name,
            project_name=project_name,
            declared_size=declared_size,
            chunk_size=chunk_size or self.chunk_size,
            user_id=user_id,
            metadata=metadata or {},
            created_at=utcnow_iso(),
        )
        with self._lock:
            self._sessions[session.session_id] = session
        (self.spool_dir / session.session_id).mkdir()
        return session

    def get(self, session_id: str) -> Optional[UploadSession]:
        with self._lock:
            return self._sessions.get(session_id)

    def put_chunk(self, session_id: str, n: int, body: bytes,
                  declared_digest: Optional[str] = None) -> UploadSession:
        session = self.get(session_id)
        if session is None:
            raise KeyError(session_id)
        if n < 0 or n >= session.n_chunks:
            raise IndexError(f"chunk {n} out of range 0..{session.n_chunks - 1}")
        digest = hashlib.sha256(body).hexdigest()
        if declared_digest and declared_digest != digest:
            raise DigestMismatch(
                f"chunk {n}: declared digest differs from received body")
        with self._lock:
            stored = session.chunk_digests.get(n)
            if stored is not None and stored != digest:
                raise ChunkConflict(
                    f"chunk {n} already received with different content")
            path = self.spool_dir / session_id / f"chunk_{n:06d}"
            path.write_bytes(body)
            session.chunk_digests[n] = digest
            session.chunk_sizes[n] = len(body)
        return session

    def assemble(self, session_id: str) -> bytes:
        """Concatenate all chunks in order; caller checks `complete` first."""
        session = self.get(session_id)
        if session is None:
            raise KeyError(session_id)
        parts = []
        for n in range(session.n_chunks):
            path = self.spool_dir / session_id / f"chunk_{n:06d}"
            parts.append(path.read_bytes())
        return b"".join(parts)

    def discard(self, session_id: str) -> None:
        with self._lock:
            self._sessions.pop(session_id, None)
        shutil.rmtree(self.spool_dir / session_id, ignore_errors=True)
