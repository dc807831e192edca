"""In-process push fan-out feeding the gateway's event-stream sockets.

The bus is deliberately dumb: callers compute the audience (set of user
ids) for each event; subscribers are per-user bounded queues.  A slow
subscriber loses oldest events rather than blocking publishers.
"""

from __future__ import annotations

import logging
import queue
import threading
from typing import Dict, List, Optional, Set

logger = logging.getLogger(__name__)

QUEUE_LIMIT = 256


class Subscription:
    def __init__(self, user_id: str):
        self.user_id = user_id
        self._queue: "queue.Queue[Optional[dict]]" = queue.Queue(maxsize=QUEUE_LIMIT)
        self.closed = threading.Event()
        self.dropped = 0

    def push(self, event: dict) -> None:
        if self.closed.is_set():
            return
        try:
            self._queue.put_nowait(event)
        except queue.Full:
            try:
                self._queue.get_nowait()
            except queue.Empty:
                pass
            self.dropped += 1
            try:
                self._queue.put_nowait(event)
            except queue.Full:
                pass

    def get(self, timeout: Optional[float] = None) -> Optional[dict]:
        """Next event, or None once the subscription is closed."""
        try:
            return self._queue.get(timeout=timeout)
        except queue.Empty:
            return None

    def close(self) -> None:
        self.closed.set()
        try:
            self._queue.put_nowait(None)  # wake blocked readers
        except queue.Full:
            pass


class EventBus:
    def __init__(self):
        self._lock = threading.Lock()
        self._subs: List[Subscription] = []

    def subscribe(self, user_id: str) -> Subscription:
        sub = Subscription(user_id)
        with self._lock:
            self._subs.append(sub)
        return sub

    def unsubscribe(self, sub: Subscription) -> None:
        sub.close()
        with self._lock:
            try:
                self._subs.remove(sub)
            except ValueError:
                pass

    def publish(self, event: dict, audience: Set[str]) -> int:
        """Deliver to every subscription whose user is in the audience."""
        with self._lock:
            targets = [s for s in self._subs if s.user_id in audience]
        for sub in targets:
            sub.push(event)
        return len(targets)

    def subscriber_count(self) -> int:
        with self._lock:
            return len(self._subs)

    def close_all(self) -> None:
        with self._lock:
            subs, self._subs = list(self._subs), []
        for sub in subs:
            sub.close()
