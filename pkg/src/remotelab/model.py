"""Entity types and the materialized state rebuilt from the event log.

Entities are frozen dataclasses: once read out of ``State`` they are
immutable values.  All mutation happens by committing an event through the
store; ``State.apply`` is the single, deterministic transition function used
both live and during replay, so replaying the same log always reproduces a
byte-identical canonical state.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from datetime import datetime
from enum import Enum
from typing import Dict, List, Optional, Tuple, Union

from .util import canonical_json, iso_utc, parse_utc


class Role(str, Enum):
    ADMINISTRATOR = "administrator"
    TEACHER = "teacher"
    STUDENT = "student"


class BookingState(str, Enum):
    ACTIVE = "active"
    CANCELLED = "cancelled"


class SessionState(str, Enum):
    STARTING = "starting"
    ACTIVE = "active"
    ENDING = "ending"
    ENDED = "ended"


class ChannelKind(str, Enum):
    SENSOR = "sensor"
    ACTUATOR = "actuator"


class ChannelDatatype(str, Enum):
    FLOAT = "float"
    BOOL = "bool"


ChannelValue = Union[float, bool]


@dataclass(frozen=True)
class Credential:
    algo: str
    salt: str  # hex
    hash: str  # hex


@dataclass(frozen=True)
class User:
    id: str
    display_name: str
    role: Role
    credential: Credential


@dataclass(frozen=True)
class Course:
    id: str
    title: str
    teacher_id: str
    student_ids: Tuple[str, ...] = ()
    setup_ids: Tuple[str, ...] = ()


@dataclass(frozen=True)
class Group:
    id: str
    course_id: str
    member_ids: Tuple[str, ...]


@dataclass(frozen=True)
class DiskImage:
    digest: str  # hex sha256 of content
    label: str
    content_b64: str


@dataclass(frozen=True)
class ChannelDescriptor:
    channel_id: str
    kind: ChannelKind
    datatype: ChannelDatatype
    unit: str = ""
    bounds: Optional[Tuple[float, float]] = None

    def to_dict(self) -> dict:
        return {
            "channel_id": self.channel_id,
            "kind": self.kind.value,
            "datatype": self.datatype.value,
            "unit": self.unit,
            "bounds": list(self.bounds) if self.bounds else None,
        }

    @staticmethod
    def from_dict(d: dict) -> "ChannelDescriptor":
        bounds = d.get("bounds")
        return ChannelDescriptor(
            channel_id=d["channel_id"],
            kind=ChannelKind(d["kind"]),
            datatype=ChannelDatatype(d["datatype"]),
            unit=d.get("unit", ""),
            bounds=(float(bounds[0]), float(bounds[1])) if bounds else None,
        )


@dataclass(frozen=True)
class LabSetup:
    id: str
    name: str
    base_image: str  # image digest hex
    channels: Tuple[ChannelDescriptor, ...]
    camera_source: str
    enabled: bool = True


@dataclass(frozen=True)
class TimeSlot:
    id: str
    setup_id: str
    start: datetime  # UTC, minute precision
    minutes: int

    @property
    def end(self) -> datetime:
        from datetime import timedelta

        return self.start + timedelta(minutes=self.minutes)


@dataclass(frozen=True)
class Booking:
    id: str
    slot_id: str
    group_id: str
    created_at: datetime
    state: BookingState = BookingState.ACTIVE


@dataclass(frozen=True)
class SessionRecord:
    id: str
    booking_id: str
    vm_id: str
    conference_room: str
    state: SessionState
    participant_ids: Tuple[str, ...] = ()
    started_at: Optional[datetime] = None
    ended_at: Optional[datetime] = None


@dataclass(frozen=True)
class ChatMessage:
    id: str
    group_id: str
    author: str
    body: str
    at: datetime
    seq: int


@dataclass(frozen=True)
class ActuatorWrite:
    setup_id: str
    channel_id: str
    value: ChannelValue
    author: str
    at: datetime


def _dt(v: Optional[str]) -> Optional[datetime]:
    return parse_utc(v) if v else None


class State:
    """Materialized view over the committed event sequence."""

    def __init__(self):
        self.users: Dict[str, User] = {}
        self.courses: Dict[str, Course] = {}
        self.groups: Dict[str, Group] = {}
        self.images: Dict[str, DiskImage] = {}
        self.setups: Dict[str, LabSetup] = {}
        self.slots: Dict[str, TimeSlot] = {}
        self.bookings: Dict[str, Booking] = {}
        self.sessions: Dict[str, SessionRecord] = {}
        self.chat: Dict[str, List[ChatMessage]] = {}
        self.audit: List[ActuatorWrite] = []
        # derived index: (display_name, role) -> user id
        self.user_names: Dict[Tuple[str, str], str] = {}

    # -- lookups ------------------------------------------------------

    def group_for_member(self, course_id: str, user_id: str) -> Optional[Group]:
        for g in self.groups.values():
            if g.course_id == course_id and user_id in g.member_ids:
                return g
        return None

    def booking_of_slot(self, slot_id: str) -> Optional[Booking]:
        for b in self.bookings.values():
            if b.slot_id == slot_id and b.state == BookingState.ACTIVE:
                return b
        return None

    def session_of_booking(self, booking_id: str) -> Optional[SessionRecord]:
        for s in self.sessions.values():
            if s.booking_id == booking_id and s.state != SessionState.ENDED:
                return s
        return None

    def chat_seq(self, group_id: str) -> int:
        msgs = self.chat.get(group_id)
        return msgs[-1].seq if msgs else 0

    # -- transition function -------------------------------------------

    def apply(self, kind: str, payload: dict) -> None:
        handler = getattr(self, "_apply_" + kind.replace(".", "_"), None)
        if handler is None:
            raise ValueError(f"unknown event kind: {kind}")
        handler(payload)

    def _apply_user_created(self, p: dict) -> None:
        cred = Credential(**p["credential"])
        user = User(p["user_id"], p["display_name"], Role(p["role"]), cred)
        self.users[user.id] = user
        self.user_names[(user.display_name, user.role.value)] = user.id

    def _apply_course_created(self, p: dict) -> None:
        self.courses[p["course_id"]] = Course(p["course_id"], p["title"], p["teacher_id"])

    def _apply_course_student_enrolled(self, p: dict) -> None:
        c = self.courses[p["course_id"]]
        if p["student_id"] not in c.student_ids:
            self.courses[c.id] = replace(c, student_ids=c.student_ids + (p["student_id"],))

    def _apply_course_setup_linked(self, p: dict) -> None:
        c = self.courses[p["course_id"]]
        if p["setup_id"] not in c.setup_ids:
            self.courses[c.id] = replace(c, setup_ids=c.setup_ids + (p["setup_id"],))

    def _apply_group_created(self, p: dict) -> None:
        self.groups[p["group_id"]] = Group(
            p["group_id"], p["course_id"], tuple(p["member_ids"])
        )

    def _apply_image_registered(self, p: dict) -> None:
        self.images[p["digest"]] = DiskImage(p["digest"], p["label"], p["content_b64"])

    def _apply_setup_registered(self, p: dict) -> None:
        self.setups[p["setup_id"]] = LabSetup(
            id=p["setup_id"],
            name=p["name"],
            base_image=p["base_image"],
            channels=tuple(ChannelDescriptor.from_dict(c) for c in p["channels"]),
            camera_source=p["camera_source"],
            enabled=bool(p.get("enabled", True)),
        )

    def _apply_slots_generated(self, p: dict) -> None:
        for s in p["slots"]:
            self.slots[s["slot_id"]] = TimeSlot(
                s["slot_id"], p["setup_id"], parse_utc(s["start"]), int(s["minutes"])
            )

    def _apply_booking_created(self, p: dict) -> None:
        self.bookings[p["booking_id"]] = Booking(
            p["booking_id"], p["slot_id"], p["group_id"], parse_utc(p["created_at"])
        )

    def _apply_booking_cancelled(self, p: dict) -> None:
        b = self.bookings[p["booking_id"]]
        self.bookings[b.id] = replace(b, state=BookingState.CANCELLED)

    def _apply_session_started(self, p: dict) -> None:
        self.sessions[p["session_id"]] = SessionRecord(
            id=p["session_id"],
            booking_id=p["booking_id"],
            vm_id=p["vm_id"],
            conference_room=p["conference_room"],
            state=SessionState.ACTIVE,
            started_at=parse_utc(p["at"]),
        )

    def _apply_session_participant_joined(self, p: dict) -> None:
        s = self.sessions[p["session_id"]]
        if p["user_id"] not in s.participant_ids:
            self.sessions[s.id] = replace(
                s, participant_ids=s.participant_ids + (p["user_id"],)
            )

    def _apply_session_ended(self, p: dict) -> None:
        s = self.sessions[p["session_id"]]
        self.sessions[s.id] = replace(
            s, state=SessionState.ENDED, ended_at=parse_utc(p["at"])
        )

    def _apply_session_aborted(self, p: dict) -> None:
        # compensation for a start whose teardown ran: nothing persists
        self.sessions.pop(p["session_id"], None)

    def _apply_chat_posted(self, p: dict) -> None:
        msg = ChatMessage(
            p["message_id"], p["group_id"], p["author"], p["body"],
            parse_utc(p["at"]), int(p["seq"]),
        )
        self.chat.setdefault(msg.group_id, []).append(msg)

    def _apply_actuator_written(self, p: dict) -> None:
        self.audit.append(
            ActuatorWrite(
                p["setup_id"], p["channel_id"], p["value"], p["author"], parse_utc(p["at"])
            )
        )

    # -- snapshot serialization -----------------------------------------

    def to_dict(self) -> dict:
        return {
            "users": {
                u.id: {
                    "display_name": u.display_name,
                    "role": u.role.value,
                    "credential": {
                        "algo": u.credential.algo,
                        "salt": u.credential.salt,
                        "hash": u.credential.hash,
                    },
                }
                for u in self.users.values()
            },
            "courses": {
                c.id: {
                    "title": c.title,
                    "teacher_id": c.teacher_id,
                    "student_ids": list(c.student_ids),
                    "setup_ids": list(c.setup_ids),
                }
                for c in self.courses.values()
            },
            "groups": {
                g.id: {"course_id": g.course_id, "member_ids": list(g.member_ids)}
                for g in self.groups.values()
            },
            "images": {
                i.digest: {"label": i.label, "content_b64": i.content_b64}
                for i in self.images.values()
            },
            "setups": {
                s.id: {
                    "name": s.name,
                    "base_image": s.base_image,
                    "channels": [c.to_dict() for c in s.channels],
                    "camera_source": s.camera_source,
                    "enabled": s.enabled,
                }
                for s in self.setups.values()
            },
            "slots": {
                t.id: {
                    "setup_id": t.setup_id,
                    "start": iso_utc(t.start),
                    "minutes": t.minutes,
                }
                for t in self.slots.values()
            },
            "bookings": {
                b.id: {
                    "slot_id": b.slot_id,
                    "group_id": b.group_id,
                    "created_at": iso_utc(b.created_at),
                    "state": b.state.value,
                }
                for b in self.bookings.values()
            },
            "sessions": {
                s.id: {
                    "booking_id": s.booking_id,
                    "vm_id": s.vm_id,
                    "conference_room": s.conference_room,
                    "state": s.state.value,
                    "participant_ids": list(s.participant_ids),
                    "started_at": iso_utc(s.started_at) if s.started_at else None,
                    "ended_at": iso_utc(s.ended_at) if s.ended_at else None,
                }
                for s in self.sessions.values()
            },
            "chat": {
                gid: [
                    {
                        "message_id": m.id,
                        "author": m.author,
                        "body": m.body,
                        "at": iso_utc(m.at),
                        "seq": m.seq,
                    }
                    for m in msgs
                ]
                for gid, msgs in self.chat.items()
            },
            "audit": [
                {
                    "setup_id": a.setup_id,
                    "channel_id": a.channel_id,
                    "value": a.value,
                    "author": a.author,
                    "at": iso_utc(a.at),
                }
                for a in self.audit
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "State":
        st = cls()
        for uid, u in d.get("users", {}).items():
            st.users[uid] = User(uid, u["display_name"], Role(u["role"]), Credential(**u["credential"]))
            st.user_names[(u["display_name"], u["role"])] = uid
        for cid, c in d.get("courses", {}).items():
            st.courses[cid] = Course(
                cid, c["title"], c["teacher_id"],
                tuple(c["student_ids"]), tuple(c["setup_ids"]),
            )
        for gid, g in d.get("groups", {}).items():
            st.groups[gid] = Group(gid, g["course_id"], tuple(g["member_ids"]))
        for dig, i in d.get("images", {}).items():
            st.images[dig] = DiskImage(dig, i["label"], i["content_b64"])
        for sid, s in d.get("setups", {}).items():
            st.setups[sid] = LabSetup(
                id=sid,
                name=s["name"],
                base_image=s["base_image"],
                channels=tuple(ChannelDescriptor.from_dict(c) for c in s["channels"]),
                camera_source=s["camera_source"],
                enabled=s["enabled"],
            )
        for tid, t in d.get("slots", {}).items():
            st.slots[tid] = TimeSlot(tid, t["setup_id"], parse_utc(t["start"]), t["minutes"])
        for bid, b in d.get("bookings", {}).items():
            st.bookings[bid] = Booking(
                bid, b["slot_id"], b["group_id"], parse_utc(b["created_at"]),
                BookingState(b["state"]),
            )
        for sid, s in d.get("sessions", {}).items():
            st.sessions[sid] = SessionRecord(
                id=sid,
                booking_id=s["booking_id"],
                vm_id=s["vm_id"],
                conference_room=s["conference_room"],
                state=SessionState(s["state"]),
                participant_ids=tuple(s["participant_ids"]),
                started_at=_dt(s["started_at"]),
                ended_at=_dt(s["ended_at"]),
            )
        for gid, msgs in d.get("chat", {}).items():
            st.chat[gid] = [
                ChatMessage(m["message_id"], gid, m["author"], m["body"], parse_utc(m["at"]), m["seq"])
                for m in msgs
            ]
        st.audit = [
            ActuatorWrite(a["setup_id"], a["channel_id"], a["value"], a["author"], parse_utc(a["at"]))
            for a in d.get("audit", [])
        ]
        return st

    def canonical(self) -> str:
        return canonical_json(self.to_dict())
