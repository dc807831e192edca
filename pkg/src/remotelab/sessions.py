"""Session broker: booking -> live collaborative session -> teardown.

Starting a session acquires a VM from the setup's pool, creates a conference
room, commits the lifecycle event, then connects the relay upstream to the
VM's desktop endpoint.  Any failure along the way compensates everything
already done, so a failed start leaves no assigned VM, no live room, and no
session in the state.  Ending a session closes relay channels, destroys the
room, resets the VM to its base image, and invalidates every participant
token; ending is idempotent and races safely with the scheduled sweep.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass
from datetime import datetime, timedelta
from typing import Dict, List, Optional, Tuple

from .collab import RoomManager
from .errors import (
    AlreadyStarted,
    ConnectFailed,
    InvalidState,
    NotFound,
    NotParticipantEligible,
    RemoteLabError,
    SessionNotActive,
    TokenInvalid,
    TooEarly,
    TooLate,
)
from .events import EventBus
from .model import Role, SessionRecord, SessionState, State
from .persistence import EventStore
from .util import ensure_utc, iso_utc, new_id, new_token
from .vmpool import VmPool

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ParticipantToken:
    token: str
    session_id: str
    user_id: str
    expires_at: datetime


@dataclass(frozen=True)
class SessionGraces:
    early_start_min: int = 5   # may start this many minutes before the slot
    end_grace_min: int = 5     # sweep reclaims this long after slot end
    token_extra_min: int = 5   # tokens outlive the slot end by this much


def participant_eligible(state: State, session_or_booking_id: str, user_id: str, *, booking: bool = False) -> bool:
    """Group member, course teacher, or administrator."""
    user = state.users.get(user_id)
    if user is None:
        return False
    if user.role == Role.ADMINISTRATOR:
        return True
    if booking:
        b = state.bookings.get(session_or_booking_id)
    else:
        session = state.sessions.get(session_or_booking_id)
        b = state.bookings.get(session.booking_id) if session else None
    if b is None:
        return False
    group = state.groups[b.group_id]
    if user_id in group.member_ids:
        return True
    course = state.courses[group.course_id]
    return user.role == Role.TEACHER and course.teacher_id == user_id


class SessionBroker:
    def __init__(
        self,
        store: EventStore,
        pool: VmPool,
        rooms: RoomManager,
        bus: EventBus,
        graces: SessionGraces = SessionGraces(),
    ):
        self._store = store
        self._pool = pool
        self._rooms = rooms
        self._bus = bus
        self.graces = graces
        self.relay = None  # wired by the platform after the hub exists
        self._lock = threading.Lock()
        self._tokens: Dict[str, ParticipantToken] = {}
        self.notices: List[Tuple[str, str]] = []  # (session_id, what) for admins

    # -- lifecycle -----------------------------------------------------------

    def start_session(self, booking_id: str, caller_id: Optional[str], now: datetime) -> SessionRecord:
        now = ensure_utc(now)
        self._store.view(lambda st: self._check_startable(st, booking_id, caller_id, now))

        slot = self._store.view(lambda st: st.slots[st.bookings[booking_id].slot_id])
        vm = self._pool.acquire(slot.setup_id)
        session_id = new_id("sess")
        try:
            room_id = self._rooms.open(session_id)
        except RemoteLabError:
            self._safe_release_vm(vm.id)
            raise

        def txn(tx):
            self._check_startable(tx.state, booking_id, caller_id, now)
            tx.commit(
                "session.started",
                {
                    "session_id": session_id,
                    "booking_id": booking_id,
                    "vm_id": vm.id,
                    "conference_room": room_id,
                    "at": iso_utc(now),
                },
                at=now,
            )
            return tx.state.sessions[session_id]

        try:
            record = self._store.transact(txn)
        except RemoteLabError:
            self._rooms.release_room(session_id)
            self._safe_release_vm(vm.id)
            raise
        self._pool.bind_session(vm.id, session_id)

        if self.relay is not None:
            try:
                self.relay.open_upstream(session_id, vm.endpoint)
            except ConnectFailed:
                # roll back: nothing of the session survives a dead upstream
                self._store.commit(
                    "session.aborted",
                    {"session_id": session_id, "at": iso_utc(now), "reason": "upstream connect failed"},
                    at=now,
                )
                self.relay.close_session_channels(session_id)
                self._rooms.release_room(session_id)
                self._safe_release_vm(vm.id)
                self.notify(session_id, "upstream connect failed during start")
                raise

        self._publish_state(session_id, "active")
        return record

    def _check_startable(self, st: State, booking_id: str, caller_id: Optional[str], now: datetime) -> None:
        booking = st.bookings.get(booking_id)
        if booking is None:
            raise NotFound(f"no booking {booking_id}")
        if booking.state.value != "active":
            raise InvalidState("booking is cancelled")
        if caller_id is not None and not participant_eligible(st, booking_id, caller_id, booking=True):
            raise NotParticipantEligible("caller may not start this session")
        slot = st.slots[booking.slot_id]
        if now < slot.start - timedelta(minutes=self.graces.early_start_min):
            raise TooEarly(f"slot opens at {iso_utc(slot.start)}")
        if now >= slot.end:
            raise TooLate("slot already ended")
        if st.session_of_booking(booking_id) is not None:
            raise AlreadyStarted("booking already has a live session")

    def _safe_release_vm(self, vm_id: str) -> None:
        try:
            self._pool.release_and_reset(vm_id)
        except RemoteLabError as exc:
            logger.warning("vm %s release during rollback failed: %s", vm_id, exc)

    def join_session(self, session_id: str, user_id: str, now: datetime) -> ParticipantToken:
        now = ensure_utc(now)

        def txn(tx):
            st = tx.state
            session = st.sessions.get(session_id)
            if session is None:
                raise NotFound(f"no session {session_id}")
            if session.state != SessionState.ACTIVE:
                raise SessionNotActive(f"session is {session.state.value}")
            if not participant_eligible(st, session_id, user_id):
                raise NotParticipantEligible("not a group member, course teacher, or administrator")
            if user_id not in session.participant_ids:
                tx.commit(
                    "session.participant_joined",
                    {"session_id": session_id, "user_id": user_id},
                    at=now,
                )
            booking = st.bookings[session.booking_id]
            slot = st.slots[booking.slot_id]
            return slot.end + timedelta(minutes=self.graces.token_extra_min)

        expires_at = self._store.transact(txn)
        token = ParticipantToken(new_token(), session_id, user_id, expires_at)
        with self._lock:
            self._tokens[token.token] = token
        return token

    def end_session(
        self, session_id: str, caller_id: Optional[str], now: datetime, reason: str = "ended"
    ) -> SessionRecord:
        now = ensure_utc(now)

        def txn(tx):
            st = tx.state
            session = st.sessions.get(session_id)
            if session is None:
                raise NotFound(f"no session {session_id}")
            if caller_id is not None and not participant_eligible(st, session_id, caller_id):
                raise NotParticipantEligible("caller may not end this session")
            if session.state == SessionState.ENDED:
                return session, False
            tx.commit(
                "session.ended",
                {"session_id": session_id, "at": iso_utc(now), "reason": reason},
                at=now,
            )
            return st.sessions[session_id], True

        record, newly_ended = self._store.transact(txn)
        if not newly_ended:
            return record  # idempotent terminal result

        if self.relay is not None:
            self.relay.close_session_channels(session_id)
        self._rooms.release_room(session_id)
        if record.vm_id:
            try:
                self._pool.release_and_reset(record.vm_id)
            except NotFound:
                logger.info("vm %s of session %s gone (previous process?)", record.vm_id, session_id)
            except RemoteLabError as exc:
                self.notify(session_id, f"vm reset failed: {exc}")
        with self._lock:
            self._tokens = {
                t: pt for t, pt in self._tokens.items() if pt.session_id != session_id
            }
        self._publish_state(session_id, "ended")
        return record

    def sweep(self, now: datetime) -> List[str]:
        """End every session whose slot finished more than the grace ago."""
        now = ensure_utc(now)
        deadline = timedelta(minutes=self.graces.end_grace_min)

        def overdue(st: State) -> List[str]:
            out = []
            for session in st.sessions.values():
                if session.state == SessionState.ENDED:
                    continue
                booking = st.bookings[session.booking_id]
                slot = st.slots[booking.slot_id]
                if now >= slot.end + deadline:
                    out.append(session.id)
            return out

        ended = []
        for session_id in self._store.view(overdue):
            try:
                self.end_session(session_id, None, now, reason="reclaimed by sweep")
                ended.append(session_id)
            except RemoteLabError as exc:
                logger.warning("sweep could not end %s: %s", session_id, exc)
        return ended

    # -- tokens / descriptor -------------------------------------------------

    def validate_token(
        self, token: str, now: datetime, session_id: Optional[str] = None
    ) -> ParticipantToken:
        now = ensure_utc(now)
        with self._lock:
            pt = self._tokens.get(token)
        if pt is None:
            raise TokenInvalid("unknown participant token")
        if session_id is not None and pt.session_id != session_id:
            raise TokenInvalid("token belongs to a different session")
        if now >= pt.expires_at:
            raise TokenInvalid("participant token expired")
        session = self._store.view(lambda st: st.sessions.get(pt.session_id))
        if session is None or session.state == SessionState.ENDED:
            raise TokenInvalid("session is over")
        return pt

    def resolve_token_setup(self, token: str, now: datetime) -> Tuple[str, str, str]:
        """(setup_id, session_id, user_id) for a valid token; hardware gate."""
        pt = self.validate_token(token, now)
        setup_id = self._store.view(
            lambda st: st.slots[
                st.bookings[st.sessions[pt.session_id].booking_id].slot_id
            ].setup_id
        )
        return setup_id, pt.session_id, pt.user_id

    def session_descriptor(self, session_id: str, token: str, now: datetime) -> dict:
        pt = self.validate_token(token, now, session_id=session_id)

        def look(st):
            session = st.sessions[session_id]
            booking = st.bookings[session.booking_id]
            slot = st.slots[booking.slot_id]
            setup = st.setups[slot.setup_id]
            return session, booking, slot, setup

        session, booking, slot, setup = self._store.view(look)
        return {
            "session_id": session_id,
            "state": session.state.value,
            "group_id": booking.group_id,
            "setup_id": setup.id,
            "setup_name": setup.name,
            "slot": {"start": iso_utc(slot.start), "end": iso_utc(slot.end)},
            "relay_path": f"/ws/relay/{session_id}",
            "events_path": "/ws/events",
            "camera_path": f"/stream/camera/{session_id}",
            "conference": {
                "room_id": session.conference_room,
                "url": self._rooms.join_url(session.conference_room),
            },
            "channels": [ch.to_dict() for ch in setup.channels],
            "chat_group_id": booking.group_id,
            "token_expires_at": iso_utc(pt.expires_at),
        }

    # -- misc ------------------------------------------------------------

    def notify(self, session_id: str, what: str) -> None:
        logger.warning("session %s: %s", session_id, what)
        with self._lock:
            self.notices.append((session_id, what))

    def notify_upstream_failure(self, session_id: str, reason: str) -> None:
        self.notify(session_id, f"upstream failure: {reason}")

    def recover_orphans(self, now: datetime) -> List[str]:
        """End sessions left non-Ended by a previous process."""
        now = ensure_utc(now)
        orphans = self._store.view(
            lambda st: [s.id for s in st.sessions.values() if s.state != SessionState.ENDED]
        )
        for session_id in orphans:
            try:
                self.end_session(session_id, None, now, reason="recovered at startup")
            except RemoteLabError as exc:
                logger.warning("orphan recovery of %s failed: %s", session_id, exc)
        return orphans

    def token_count(self, session_id: str) -> int:
        with self._lock:
            return sum(1 for pt in self._tokens.values() if pt.session_id == session_id)

    def _publish_state(self, session_id: str, new_state: str) -> None:
        def audience(st):
            from .collab import _session_audience

            return _session_audience(st, session_id)

        self._bus.publish(
            {"type": "session", "session_id": session_id, "state": new_state},
            self._store.view(audience),
        )
