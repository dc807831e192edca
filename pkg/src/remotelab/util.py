"""Small shared helpers: ids, timestamps, canonical JSON, clocks."""

from __future__ import annotations

import json
import re
import secrets
import threading
import uuid
from datetime import datetime, timedelta, timezone

from .errors import InvalidArgument

_WEEK_RE = re.compile(r"^(\d{4})-W(\d{2})$")


def new_id(prefix: str) -> str:
    return f"{prefix}-{uuid.uuid4().hex[:12]}"


def new_token() -> str:
    return secrets.token_urlsafe(32)


def utc_now() -> datetime:
    return datetime.now(timezone.utc).replace(microsecond=0)


def ensure_utc(dt: datetime) -> datetime:
    if dt.tzinfo is None:
        raise InvalidArgument("timestamp must be timezone-aware UTC")
    return dt.astimezone(timezone.utc)


def iso_utc(dt: datetime) -> str:
    dt = ensure_utc(dt)
    return dt.strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_utc(text: str) -> datetime:
    """Parse an ISO-8601 UTC timestamp ('Z' or explicit offset)."""
    if not isinstance(text, str):
        raise InvalidArgument("timestamp must be a string")
    raw = text.strip()
    if raw.endswith("Z"):
        raw = raw[:-1] + "+00:00"
    try:
        dt = datetime.fromisoformat(raw)
    except ValueError:
        raise InvalidArgument(f"bad timestamp: {text!r}") from None
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def iso_week_of(dt: datetime) -> str:
    """ISO-8601 week identifier ('2026-W33') of a UTC instant."""
    cal = ensure_utc(dt).isocalendar()
    return f"{cal[0]:04d}-W{cal[1]:02d}"


def parse_iso_week(text: str) -> str:
    m = _WEEK_RE.match(text or "")
    if not m:
        raise InvalidArgument(f"bad ISO week (expected YYYY-Www): {text!r}")
    week = int(m.group(2))
    if not 1 <= week <= 53:
        raise InvalidArgument(f"bad ISO week number: {text!r}")
    return f"{int(m.group(1)):04d}-W{week:02d}"


def canonical_json(value) -> str:
    """Deterministic JSON: sorted keys, no whitespace, utf-8 relaxed."""
    return json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


class Clock:
    """Time source; injectable so grace/sweep tests never sleep."""

    def now(self) -> datetime:
        raise NotImplementedError


class SystemClock(Clock):
    def now(self) -> datetime:
        return utc_now()


class ManualClock(Clock):
    """Settable clock; starts at the given instant."""

    def __init__(self, start: datetime):
        self._now = ensure_utc(start)
        self._lock = threading.Lock()

    def now(self) -> datetime:
        with self._lock:
            return self._now

    def set(self, dt: datetime) -> None:
        with self._lock:
            self._now = ensure_utc(dt)

    def advance(self, **kwargs) -> datetime:
        with self._lock:
            self._now = self._now + timedelta(**kwargs)
            return self._now
