"""Group chat, hardware channels, camera sources, conference rooms.

Chat is scoped per group and persists across sessions indefinitely (that is
the point: notes taken in one work session are there in the next).  Hardware
and camera access requires a valid participant token for a session on the
same setup.  Conference room lifecycle is managed per session through the
``ConferenceAdapter`` seam; media never flows through this codebase.
"""

from __future__ import annotations

import logging
import threading
from datetime import datetime
from typing import Callable, Dict, List, Optional, Protocol, Set, Tuple

from .errors import (
    AdapterFailure,
    BodyTooLarge,
    InvalidArgument,
    KindMismatch,
    NotFound,
    OutOfBounds,
    PermissionDenied,
    SessionNotActive,
    TokenInvalid,
    UnknownChannel,
)
from .events import EventBus
from .model import (
    ChannelDatatype,
    ChannelDescriptor,
    ChannelKind,
    ChannelValue,
    ChatMessage,
    Role,
    SessionState,
    State,
)
from .persistence import EventStore
from .util import ensure_utc, iso_utc, new_id

logger = logging.getLogger(__name__)

MAX_CHAT_BODY = 4096


def admins_of(state: State) -> Set[str]:
    return {u.id for u in state.users.values() if u.role == Role.ADMINISTRATOR}


def chat_audience(state: State, group_id: str) -> Set[str]:
    group = state.groups[group_id]
    course = state.courses[group.course_id]
    return set(group.member_ids) | {course.teacher_id} | admins_of(state)


class ConferenceAdapter(Protocol):
    def create_room(self, session_id: str) -> str: ...

    def destroy_room(self, room_id: str) -> None: ...

    def join_url(self, room_id: str) -> str: ...


class CameraSource(Protocol):
    def next_frame(self) -> Tuple[datetime, bytes]:
        """Next image (JPEG bytes) with a non-decreasing timestamp."""


class HardwareDriver(Protocol):
    def read(self, channel_id: str, at: datetime) -> ChannelValue: ...

    def write(self, channel_id: str, value: ChannelValue) -> ChannelValue: ...


class RoomManager:
    """Exactly one live conference room per active session."""

    def __init__(self, adapter: ConferenceAdapter):
        self._adapter = adapter
        self._lock = threading.Lock()
        self._rooms: Dict[str, str] = {}

    def open(self, session_id: str) -> str:
        """Create (or return) the room for a session being started."""
        with self._lock:
            room = self._rooms.get(session_id)
            if room is None:
                room = self._adapter.create_room(session_id)
                self._rooms[session_id] = room
            return room

    def ensure_room(self, store: EventStore, session_id: str) -> str:
        session = store.view(lambda st: st.sessions.get(session_id))
        if session is None:
            raise NotFound(f"no session {session_id}")
        if session.state != SessionState.ACTIVE:
            raise SessionNotActive(f"session {session_id} is {session.state.value}")
        return self.open(session_id)

    def release_room(self, session_id: str) -> None:
        with self._lock:
            room = self._rooms.pop(session_id, None)
        if room is not None:
            try:
                self._adapter.destroy_room(room)
            except AdapterFailure:
                logger.warning("conference room %s destroy failed", room)

    def join_url(self, room_id: str) -> str:
        return self._adapter.join_url(room_id)

    def live_rooms(self) -> int:
        with self._lock:
            return len(self._rooms)


class ChatService:
    def __init__(self, store: EventStore, bus: EventBus):
        self._store = store
        self._bus = bus

    def post_message(
        self, group_id: str, author_id: str, body: str, now: datetime
    ) -> ChatMessage:
        now = ensure_utc(now)
        if not body.strip():
            raise InvalidArgument("empty chat message")
        if len(body) > MAX_CHAT_BODY:
            raise BodyTooLarge(f"chat body exceeds {MAX_CHAT_BODY} chars")

        def txn(tx):
            st = tx.state
            group = st.groups.get(group_id)
            if group is None:
                raise NotFound(f"no group {group_id}")
            if author_id not in chat_audience(st, group_id):
                raise PermissionDenied("not a member, course teacher, or administrator")
            seq = st.chat_seq(group_id) + 1
            message_id = new_id("m")
            tx.commit(
                "chat.posted",
                {
                    "message_id": message_id,
                    "group_id": group_id,
                    "author": author_id,
                    "body": body,
                    "at": iso_utc(now),
                    "seq": seq,
                },
                at=now,
            )
            msg = st.chat[group_id][-1]
            return msg, chat_audience(st, group_id)

        msg, audience = self._store.transact(txn)
        self._bus.publish(
            {
                "type": "chat",
                "group_id": group_id,
                "message_id": msg.id,
                "author": msg.author,
                "body": msg.body,
                "at": iso_utc(msg.at),
                "seq": msg.seq,
            },
            audience,
        )
        return msg

    def history(
        self, group_id: str, caller_id: str, after_seq: int = 0, limit: int = 100
    ) -> List[ChatMessage]:
        if limit <= 0:
            raise InvalidArgument("limit must be positive")

        def look(st):
            group = st.groups.get(group_id)
            if group is None:
                raise NotFound(f"no group {group_id}")
            if caller_id not in chat_audience(st, group_id):
                raise PermissionDenied("not a member, course teacher, or administrator")
            msgs = st.chat.get(group_id, [])
            return [m for m in msgs if m.seq > after_seq][:limit]

        return self._store.view(look)


class HardwareService:
    """Sensor reads and audited actuator writes, gated by session tokens."""

    def __init__(
        self,
        store: EventStore,
        bus: EventBus,
        driver_for: Callable[[str], HardwareDriver],
        token_resolver: Callable[[str], Tuple[str, str, str]],
    ):
        self._store = store
        self._bus = bus
        self._driver_for = driver_for
        # maps participant token -> (setup_id, session_id, user_id); raises TokenInvalid
        self._resolve_token = token_resolver

    def _channel(self, setup_id: str, channel_id: str) -> ChannelDescriptor:
        setup = self._store.view(lambda st: st.setups.get(setup_id))
        if setup is None:
            raise NotFound(f"no setup {setup_id}")
        for ch in setup.channels:
            if ch.channel_id == channel_id:
                return ch
        raise UnknownChannel(f"setup {setup_id} has no channel {channel_id}")

    def _authorized_channel(
        self, setup_id: str, channel_id: str, token: str
    ) -> ChannelDescriptor:
        token_setup, _, _ = self._resolve_token(token)
        if token_setup != setup_id:
            raise TokenInvalid("token does not belong to a session on this setup")
        return self._channel(setup_id, channel_id)

    def read_sensor(
        self, setup_id: str, channel_id: str, token: str, now: datetime
    ) -> Tuple[ChannelValue, datetime]:
        now = ensure_utc(now)
        ch = self._authorized_channel(setup_id, channel_id, token)
        if ch.kind != ChannelKind.SENSOR:
            raise KindMismatch(f"channel {channel_id} is not a sensor")
        value = self._driver_for(setup_id).read(channel_id, now)
        return value, now

    def set_actuator(
        self, setup_id: str, channel_id: str, value: ChannelValue, token: str, now: datetime
    ) -> ChannelValue:
        now = ensure_utc(now)
        _, session_id, user_id = self._resolve_token(token)
        ch = self._authorized_channel(setup_id, channel_id, token)
        if ch.kind != ChannelKind.ACTUATOR:
            raise KindMismatch(f"channel {channel_id} is not an actuator")
        value = _validate_value(ch, value)
        applied = self._driver_for(setup_id).write(channel_id, value)

        def txn(tx):
            tx.commit(
                "actuator.written",
                {
                    "setup_id": setup_id,
                    "channel_id": channel_id,
                    "value": applied,
                    "author": user_id,
                    "at": iso_utc(now),
                },
                at=now,
            )
            return _session_audience(tx.state, session_id)

        audience = self._store.transact(txn)
        self._bus.publish(
            {
                "type": "actuator",
                "setup_id": setup_id,
                "channel_id": channel_id,
                "value": applied,
                "at": iso_utc(now),
            },
            audience,
        )
        return applied

    def sample_sensors(self, setup_id: str, session_id: str, now: datetime) -> List[dict]:
        """Read every sensor channel and push the values to participants."""
        now = ensure_utc(now)
        setup = self._store.view(lambda st: st.setups.get(setup_id))
        if setup is None:
            raise NotFound(f"no setup {setup_id}")
        driver = self._driver_for(setup_id)
        samples = []
        for ch in setup.channels:
            if ch.kind != ChannelKind.SENSOR:
                continue
            samples.append(
                {
                    "type": "sensor",
                    "setup_id": setup_id,
                    "channel_id": ch.channel_id,
                    "value": driver.read(ch.channel_id, now),
                    "unit": ch.unit,
                    "at": iso_utc(now),
                }
            )
        audience = self._store.view(lambda st: _session_audience(st, session_id))
        for event in samples:
            self._bus.publish(event, audience)
        return samples


def _validate_value(ch: ChannelDescriptor, value: ChannelValue) -> ChannelValue:
    if ch.datatype == ChannelDatatype.BOOL:
        if not isinstance(value, bool):
            raise InvalidArgument(f"channel {ch.channel_id} expects a boolean")
        return value
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise InvalidArgument(f"channel {ch.channel_id} expects a number")
    value = float(value)
    low, high = ch.bounds
    if not low <= value <= high:
        raise OutOfBounds(f"{value} outside [{low}, {high}] for {ch.channel_id}")
    return value


def _session_audience(state: State, session_id: str) -> Set[str]:
    session = state.sessions.get(session_id)
    if session is None:
        return admins_of(state)
    booking = state.bookings[session.booking_id]
    group = state.groups[booking.group_id]
    course = state.courses[group.course_id]
    return set(group.member_ids) | {course.teacher_id} | admins_of(state)
