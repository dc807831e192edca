"""Append-only event log with snapshot reload.

This is the serialization point every other module commits through: one
writer lock guards seq assignment, the durable append, and the in-memory
state transition.  Readers take the same lock briefly (``view``); committed
entities are immutable, so anything read out stays consistent.

On-disk layout under the data directory:

    events.log     one canonical-JSON event per line:
                   {"at": ..., "kind": ..., "payload": {...}, "seq": n}
    snapshot.json  {"as_of_seq": n, "state": {...}}

A commit is durable (flushed, and fsynced unless disabled) before the call
returns.  A failed append truncates the file back to the last good offset so
no partial line is ever visible to replay.  Replay of a log with a garbled
tail recovers the valid prefix and reports the corruption.

Lock discipline: never invoke drivers, the relay, or the VM pool from inside
``transact``/``view`` - those components take their own locks first and then
commit here.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Callable, List, Optional, Tuple, TypeVar

from .errors import StorageFailure
from .model import State
from .util import canonical_json, iso_utc, parse_utc, utc_now

logger = logging.getLogger(__name__)

T = TypeVar("T")

EVENTS_FILE = "events.log"
SNAPSHOT_FILE = "snapshot.json"


@dataclass(frozen=True)
class Event:
    seq: int
    at: datetime
    kind: str
    payload: dict

    def to_line(self) -> str:
        return canonical_json(
            {"seq": self.seq, "at": iso_utc(self.at), "kind": self.kind, "payload": self.payload}
        )


@dataclass(frozen=True)
class Snapshot:
    as_of_seq: int
    state: dict


def parse_event_line(line: str) -> Event:
    doc = json.loads(line)
    return Event(
        seq=int(doc["seq"]),
        at=parse_utc(doc["at"]),
        kind=str(doc["kind"]),
        payload=doc["payload"],
    )


def read_log(path) -> Tuple[List[Event], Optional[str]]:
    """Parse an events file independently of any store instance.

    Returns the gap-free prefix of valid events plus a description of any
    trailing corruption (truncated/garbled line or seq discontinuity).
    Used by recovery and by the recount oracles in the tests.
    """
    events: List[Event] = []
    corruption = None
    expected = 1
    try:
        raw = Path(path).read_bytes()
    except FileNotFoundError:
        return events, None
    for lineno, line in enumerate(raw.split(b"\n"), start=1):
        if not line:
            continue
        try:
            ev = parse_event_line(line.decode("utf-8"))
        except (ValueError, KeyError, UnicodeDecodeError) as exc:
            corruption = f"line {lineno}: unreadable event ({exc.__class__.__name__})"
            break
        if ev.seq != expected:
            corruption = f"line {lineno}: expected seq {expected}, found {ev.seq}"
            break
        events.append(ev)
        expected += 1
    return events, corruption


class Transaction:
    """Handle passed to ``transact`` callbacks: read state, commit events."""

    def __init__(self, store: "EventStore"):
        self._store = store

    @property
    def state(self) -> State:
        return self._store._state

    def commit(self, kind: str, payload: dict, at: Optional[datetime] = None) -> Event:
        return self._store._commit_locked(kind, payload, at)


class EventStore:
    def __init__(self, data_dir, fsync: bool = True):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.events_path = self.data_dir / EVENTS_FILE
        self.snapshot_path = self.data_dir / SNAPSHOT_FILE
        self._fsync = fsync
        self._lock = threading.RLock()
        self._state = State()
        self._last_seq = 0
        self.corruption: Optional[str] = None
        self._load()
        self._file = open(self.events_path, "ab")
        self._good_offset = self._file.seek(0, os.SEEK_END)

    # -- recovery --------------------------------------------------------

    def _load(self) -> None:
        start_seq = 0
        if self.snapshot_path.exists():
            snap = json.loads(self.snapshot_path.read_text("utf-8"))
            self._state = State.from_dict(snap["state"])
            start_seq = int(snap["as_of_seq"])
            self._last_seq = start_seq
        events, corruption = self._read_from(start_seq)
        for ev in events:
            self._state.apply(ev.kind, ev.payload)
            self._last_seq = ev.seq
        if corruption:
            self.corruption = corruption
            logger.warning("event log corruption, recovering prefix: %s", corruption)
            self._truncate_to_valid_prefix()

    def _read_from(self, after_seq: int) -> Tuple[List[Event], Optional[str]]:
        events, corruption = read_log(self.events_path)
        return [ev for ev in events if ev.seq > after_seq], corruption

    def _truncate_to_valid_prefix(self) -> None:
        events, _ = read_log(self.events_path)
        with open(self.events_path, "r+b") as f:
            good = 0
            for _ in range(len(events)):
                line = f.readline()
                good += len(line)
            f.truncate(good)

    # -- commit path -------------------------------------------------------

    def commit(self, kind: str, payload: dict, at: Optional[datetime] = None) -> Event:
        with self._lock:
            return self._commit_locked(kind, payload, at)

    def _commit_locked(self, kind: str, payload: dict, at: Optional[datetime]) -> Event:
        event = Event(self._last_seq + 1, at or utc_now(), kind, payload)
        try:
            line = event.to_line()
        except (TypeError, ValueError) as exc:
            raise StorageFailure(f"unserializable event payload: {exc}")
        if not hasattr(self._state, "_apply_" + kind.replace(".", "_")):
            raise StorageFailure(f"unknown event kind: {kind}")
        try:
            self._append(line + "\n")
        except OSError as exc:
            self._rewind()
            raise StorageFailure(f"append failed: {exc}")
        try:
            self._state.apply(event.kind, event.payload)
        except Exception:
            # keep disk and memory in agreement before propagating
            self._rewind()
            raise
        self._good_offset = self._file.tell()
        self._last_seq = event.seq
        return event

    def _append(self, text: str) -> None:
        self._file.write(text.encode("utf-8"))
        self._file.flush()
        if self._fsync:
            os.fsync(self._file.fileno())

    def _rewind(self) -> None:
        try:
            self._file.truncate(self._good_offset)
            self._file.seek(self._good_offset)
        except OSError:
            logger.exception("could not rewind event log after failed append")

    # -- transactions ----------------------------------------------------

    def transact(self, fn: Callable[[Transaction], T]) -> T:
        with self._lock:
            return fn(Transaction(self))

    def view(self, fn: Callable[[State], T]) -> T:
        with self._lock:
            return fn(self._state)

    @property
    def last_seq(self) -> int:
        with self._lock:
            return self._last_seq

    def canonical_state(self) -> str:
        with self._lock:
            return self._state.canonical()

    # -- snapshots ---------------------------------------------------------

    def take_snapshot(self) -> Snapshot:
        with self._lock:
            snap = Snapshot(self._last_seq, self._state.to_dict())
        tmp = self.snapshot_path.with_suffix(".tmp")
        try:
            tmp.write_text(
                canonical_json({"as_of_seq": snap.as_of_seq, "state": snap.state}),
                "utf-8",
            )
            os.replace(tmp, self.snapshot_path)
        except OSError as exc:
            raise StorageFailure(f"snapshot failed: {exc}")
        return snap

    def close(self) -> None:
        with self._lock:
            if self._file.closed:
                return
            try:
                self._file.flush()
                self._file.close()
            except OSError:
                pass
