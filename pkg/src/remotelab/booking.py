"""Time-slot generation and quota-constrained group booking.

The weekly quota counts a group's Active bookings by the ISO-8601 week (UTC)
of the *slot's start*, not of the booking call: the restriction is about lab
usage per week.  Cancelled bookings do not count.  book_slot and
cancel_booking run their check-and-commit atomically inside a store
transaction, so racing attempts serialize and exactly one wins a free slot.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from typing import Dict, List, Optional, Tuple

from .errors import (
    AlreadyStarted,
    InvalidArgument,
    InvalidState,
    InvalidWindow,
    NotEligible,
    NotFound,
    OverlapExisting,
    PermissionDenied,
    QuotaExceeded,
    SlotInPast,
    SlotTaken,
)
from .model import Booking, BookingState, Group, Role, State, TimeSlot
from .persistence import EventStore
from .util import ensure_utc, iso_utc, iso_week_of, new_id

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class QuotaPolicy:
    """Max Active bookings per group per ISO week; None means unlimited.

    One global policy applies across all setups; per-setup overrides are the
    extension point for finer-grained restriction kinds.
    """

    max_slots_per_group_per_week: Optional[int] = 2
    per_setup: Dict[str, Optional[int]] = field(default_factory=dict)

    def __post_init__(self):
        for limit in [self.max_slots_per_group_per_week, *self.per_setup.values()]:
            if limit is not None and limit < 1:
                raise InvalidArgument("quota must be >= 1 when bounded")

    def limit_for(self, setup_id: str) -> Optional[int]:
        if setup_id in self.per_setup:
            return self.per_setup[setup_id]
        return self.max_slots_per_group_per_week


def active_bookings_in_week(state: State, group_id: str, iso_week: str) -> List[Booking]:
    """All Active bookings of a group whose slot start falls in the week."""
    out = []
    for b in state.bookings.values():
        if b.group_id != group_id or b.state != BookingState.ACTIVE:
            continue
        slot = state.slots[b.slot_id]
        if iso_week_of(slot.start) == iso_week:
            out.append(b)
    return out


class Scheduler:
    def __init__(self, store: EventStore, policy: QuotaPolicy = QuotaPolicy()):
        self._store = store
        self.policy = policy

    # -- slot generation ---------------------------------------------------

    def generate_slots(
        self,
        setup_id: str,
        window_start: datetime,
        window_end: datetime,
        slot_minutes: int,
    ) -> List[TimeSlot]:
        window_start = ensure_utc(window_start)
        window_end = ensure_utc(window_end)
        if window_end <= window_start:
            raise InvalidWindow("window_end must be after window_start")
        if slot_minutes <= 0:
            raise InvalidArgument("slot_minutes must be positive")
        if window_start.second or window_start.microsecond:
            raise InvalidArgument("slots have minute precision")

        starts = []
        cursor = window_start
        step = timedelta(minutes=slot_minutes)
        while cursor + step <= window_end:  # partial trailing interval: no slot
            starts.append(cursor)
            cursor += step

        def txn(tx):
            if setup_id not in tx.state.setups:
                raise NotFound(f"no setup {setup_id}")
            new_end = window_start + step * len(starts)
            for slot in tx.state.slots.values():
                if slot.setup_id != setup_id:
                    continue
                if slot.start < new_end and window_start < slot.end:
                    raise OverlapExisting(
                        f"window overlaps existing slot {slot.id} at {iso_utc(slot.start)}"
                    )
            if not starts:
                return []
            payload = {
                "setup_id": setup_id,
                "slots": [
                    {"slot_id": new_id("t"), "start": iso_utc(s), "minutes": slot_minutes}
                    for s in starts
                ],
            }
            tx.commit("slots.generated", payload)
            return [tx.state.slots[s["slot_id"]] for s in payload["slots"]]

        return self._store.transact(txn)

    # -- booking ------------------------------------------------------------

    def book_slot(self, group_id: str, slot_id: str, now: datetime) -> Booking:
        now = ensure_utc(now)

        def txn(tx):
            st = tx.state
            group = st.groups.get(group_id)
            if group is None:
                raise NotFound(f"no group {group_id}")
            slot = st.slots.get(slot_id)
            if slot is None:
                raise NotFound(f"no slot {slot_id}")
            if slot.start <= now:
                raise SlotInPast("slot must lie in the future")
            course = st.courses[group.course_id]
            if slot.setup_id not in course.setup_ids:
                raise NotEligible("group's course is not linked to this setup")
            if st.booking_of_slot(slot_id) is not None:
                raise SlotTaken(f"slot {slot_id} already has an active booking")
            limit = self.policy.limit_for(slot.setup_id)
            if limit is not None:
                week = iso_week_of(slot.start)
                held = len(active_bookings_in_week(st, group_id, week))
                if held >= limit:
                    raise QuotaExceeded(
                        f"group {group_id} already holds {held} booking(s) in {week}"
                    )
            booking_id = new_id("b")
            tx.commit(
                "booking.created",
                {
                    "booking_id": booking_id,
                    "slot_id": slot_id,
                    "group_id": group_id,
                    "created_at": iso_utc(now),
                },
                at=now,
            )
            return st.bookings[booking_id]

        return self._store.transact(txn)

    def cancel_booking(self, booking_id: str, caller_id: str, now: datetime) -> Booking:
        now = ensure_utc(now)

        def txn(tx):
            st = tx.state
            booking = st.bookings.get(booking_id)
            if booking is None:
                raise NotFound(f"no booking {booking_id}")
            caller = st.users.get(caller_id)
            if caller is None:
                raise NotFound(f"no user {caller_id}")
            if not self._may_touch_booking(st, booking, caller_id):
                raise PermissionDenied("not a group member, course teacher, or administrator")
            if booking.state != BookingState.ACTIVE:
                raise InvalidState("booking is not active")
            slot = st.slots[booking.slot_id]
            if now >= slot.start:
                raise AlreadyStarted("slot already started")
            tx.commit("booking.cancelled", {"booking_id": booking_id, "at": iso_utc(now)}, at=now)
            return st.bookings[booking_id]

        return self._store.transact(txn)

    @staticmethod
    def _may_touch_booking(st: State, booking: Booking, caller_id: str) -> bool:
        caller = st.users[caller_id]
        if caller.role == Role.ADMINISTRATOR:
            return True
        group = st.groups[booking.group_id]
        if caller_id in group.member_ids:
            return True
        course = st.courses[group.course_id]
        return caller.role == Role.TEACHER and course.teacher_id == caller_id

    # -- queries ------------------------------------------------------------

    def quota_remaining(self, group_id: str, iso_week: str) -> Optional[int]:
        """Remaining bookable slots in the week; None means unlimited."""

        def look(st):
            group = st.groups.get(group_id)
            if group is None:
                raise NotFound(f"no group {group_id}")
            limit = self.policy.max_slots_per_group_per_week
            if limit is None:
                return None
            held = len(active_bookings_in_week(st, group_id, iso_week))
            return max(0, limit - held)

        return self._store.view(look)

    def list_available(
        self, setup_id: str, window_from: datetime, window_to: datetime
    ) -> List[Tuple[TimeSlot, bool]]:
        window_from = ensure_utc(window_from)
        window_to = ensure_utc(window_to)

        def look(st):
            if setup_id not in st.setups:
                raise NotFound(f"no setup {setup_id}")
            rows = []
            for slot in st.slots.values():
                if slot.setup_id != setup_id:
                    continue
                if slot.start < window_to and slot.end > window_from:
                    rows.append((slot, st.booking_of_slot(slot.id) is None))
            rows.sort(key=lambda r: r[0].start)
            return rows

        return self._store.view(look)

    def group_bookings(self, group_id: str) -> List[Booking]:
        return self._store.view(
            lambda st: [b for b in st.bookings.values() if b.group_id == group_id]
        )
