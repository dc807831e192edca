"""Credential hashing and bearer-token authentication.

Credentials are stored only as salted PBKDF2 hashes.  Login responses are
identical for unknown users and wrong passwords (a dummy verification runs
either way), and hash comparison is constant-time.
"""

from __future__ import annotations

import hashlib
import hmac
import secrets
import threading
from dataclasses import dataclass
from datetime import datetime, timedelta
from typing import Dict, Optional

from .errors import InvalidCredentials, TokenExpired
from .model import Credential, Role, User
from .util import Clock, new_token

PBKDF2_ITERATIONS = 20_000
_ALGO = f"pbkdf2-sha256${PBKDF2_ITERATIONS}"


def hash_credential(secret: str) -> Credential:
    salt = secrets.token_bytes(16)
    digest = hashlib.pbkdf2_hmac("sha256", secret.encode("utf-8"), salt, PBKDF2_ITERATIONS)
    return Credential(algo=_ALGO, salt=salt.hex(), hash=digest.hex())


def verify_credential(cred: Credential, secret: str) -> bool:
    scheme, _, iterations = cred.algo.partition("$")
    if scheme != "pbkdf2-sha256":
        return False
    digest = hashlib.pbkdf2_hmac(
        "sha256", secret.encode("utf-8"), bytes.fromhex(cred.salt), int(iterations)
    )
    return hmac.compare_digest(digest.hex(), cred.hash)


_DUMMY = hash_credential("timing-equalizer")


@dataclass(frozen=True)
class AuthToken:
    token: str
    user_id: str
    role: Role
    issued_at: datetime
    expires_at: datetime


class AuthService:
    """Mints and validates opaque bearer tokens (default lifetime 12 h)."""

    def __init__(self, store, clock: Clock, lifetime_hours: float = 12.0):
        self._store = store
        self._clock = clock
        self._lifetime = timedelta(hours=lifetime_hours)
        self._tokens: Dict[str, AuthToken] = {}
        self._lock = threading.Lock()

    def authenticate(self, display_name: str, secret: str) -> AuthToken:
        user = self._find_user(display_name, secret)
        if user is None:
            raise InvalidCredentials("invalid credentials")
        now = self._clock.now()
        token = AuthToken(
            token=new_token(),
            user_id=user.id,
            role=user.role,
            issued_at=now,
            expires_at=now + self._lifetime,
        )
        with self._lock:
            self._tokens[token.token] = token
        return token

    def _find_user(self, display_name: str, secret: str) -> Optional[User]:
        candidates = self._store.view(
            lambda st: [u for u in st.users.values() if u.display_name == display_name]
        )
        if not candidates:
            verify_credential(_DUMMY, secret)  # equalize timing for unknown names
            return None
        for user in candidates:
            if verify_credential(user.credential, secret):
                return user
        return None

    def validate(self, token: str) -> AuthToken:
        with self._lock:
            info = self._tokens.get(token)
        if info is None:
            raise InvalidCredentials("unknown or revoked token")
        if self._clock.now() >= info.expires_at:
            raise TokenExpired("token expired")
        return info

    def revoke(self, token: str) -> None:
        with self._lock:
            self._tokens.pop(token, None)
