"""Bearer-key authentication and flat organization groups.

Users live in master/users.jsonl; each row binds an API key to a user id
and the organizations the user belongs to.  Organizations are nothing more
than shared group ids.
"""

from __future__ import annotations

import json
import secrets
import threading
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

from ..model import canonical_json
from ..store import Caller


@dataclass
class User:
    user_id: str
    name: str
    api_key: str
    org_ids: list[str] = field(default_factory=list)


class Users:
    def __init__(self, path: Path | str):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._by_key: dict[str, User] = {}
        self._load()

    def _load(self) -> None:
        if not self.path.exists():
            return
        for line in self.path.read_text("utf-8").splitlines():
            if line.strip():
                user = User(**json.loads(line))
                self._by_key[user.api_key] = user

    def _flush(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        lines = [canonical_json(asdict(u))
                 for u in sorted(self._by_key.values(), key=lambda u: u.user_id)]
        self.path.write_text("\n".join(lines) + ("\n" if lines else ""), "utf-8")

    def add_user(self, name: str, org_ids: Optional[list[str]] = None,
                 api_key: Optional[str] = None,
                 user_id: Optional[str] = None) -> User:
        with self._lock:
            user = User(
                user_id=user_id or f"u-{secrets.token_hex(6)}",
                name=name,
                api_key=api_key or secrets.token_urlsafe(24),
                org_ids=list(org_ids or []),
            )
            self._by_key[user.api_key] = user
            self._flush()
            return user

    def ensure_admin(self) -> Optional[User]:
        """Create a default admin when no users exist; returns it then."""
        with self._lock:
            if self._by_key:
                return None
        return self.add_user(name="admin", user_id="admin")

    def authenticate(self, api_key: str) -> Optional[Caller]:
        with self._lock:
            user = self._by_key.get(api_key)
        if user is None:
            return None
        return Caller(user_id=user.user_id, org_ids=frozenset(user.org_ids))

    def all_users(self) -> list[User]:
        with self._lock:
            return sorted(self._by_key.values(), key=lambda u: u.user_id)
