"""HTTP/WebSocket gateway: the single point of access to the lab.

Every request passes three gates: the bearer token (who), the role matrix
(may this role do this at all), and the resource rule (may this particular
user touch this particular thing).  Handlers are thin; they translate JSON
to service calls and let the shared exception handler turn domain errors
into uniform `{"error": {code, message}}` responses.

Routing is prefix-based and lives in one table so the deployment seam is
explicit: each entry names the internal component that owns the path.
"""

from __future__ import annotations

import asyncio
import base64
import json
import logging
import time
from typing import Dict, FrozenSet, List, Optional, Tuple

from fastapi import Body, Depends, FastAPI, Header, Query, Request, WebSocket, WebSocketDisconnect
from fastapi.responses import JSONResponse, StreamingResponse

from .auth import AuthToken
from .booking import active_bookings_in_week
from .errors import (
    InvalidArgument,
    InvalidCredentials,
    NotFound,
    PermissionDenied,
    RemoteLabError,
    TokenInvalid,
)
from .model import Role
from .platform import LabPlatform
from .util import iso_utc, iso_week_of, parse_utc
from .wire import InputKind

logger = logging.getLogger(__name__)

ALL_ROLES = frozenset({Role.ADMINISTRATOR, Role.TEACHER, Role.STUDENT})
ADMIN_ONLY = frozenset({Role.ADMINISTRATOR})
STAFF = frozenset({Role.ADMINISTRATOR, Role.TEACHER})

# Role matrix: which roles may invoke which action at all.  Ownership rules
# (own course, own group, session participation) are enforced after this
# gate, by the handlers and services themselves.
PERMISSIONS: Dict[str, FrozenSet[Role]] = {
    "users.create": ADMIN_ONLY,
    "images.register": ADMIN_ONLY,
    "setups.register": ADMIN_ONLY,
    "courses.create": STAFF,
    "courses.enroll": STAFF,
    "courses.link_setup": STAFF,
    "groups.create": STAFF,
    "slots.generate": STAFF,
    "slots.list": ALL_ROLES,
    "bookings.create": ALL_ROLES,
    "bookings.cancel": ALL_ROLES,
    "bookings.read": ALL_ROLES,
    "quota.read": ALL_ROLES,
    "sessions.start": ALL_ROLES,
    "sessions.join": ALL_ROLES,
    "sessions.end": ALL_ROLES,
    "sessions.descriptor": ALL_ROLES,
    "chat.post": ALL_ROLES,
    "chat.read": ALL_ROLES,
    "channels.list": ALL_ROLES,
    "channels.read": ALL_ROLES,
    "channels.write": ALL_ROLES,
    "events.subscribe": ALL_ROLES,
    "relay.attach": ALL_ROLES,
    "camera.view": ALL_ROLES,
    "whoami.read": ALL_ROLES,
    "status.read": ADMIN_ONLY,
    "debug.desktop": ADMIN_ONLY,
}

# Actions that commit events; the authorization sweep iterates exactly these.
MUTATING_ACTIONS = (
    "users.create",
    "images.register",
    "setups.register",
    "courses.create",
    "courses.enroll",
    "courses.link_setup",
    "groups.create",
    "slots.generate",
    "bookings.create",
    "bookings.cancel",
    "sessions.start",
    "sessions.join",
    "sessions.end",
    "chat.post",
    "channels.write",
)


def authorize(token: AuthToken, action: str) -> None:
    """Matrix gate; resource-level rules come after."""
    allowed = PERMISSIONS.get(action)
    if allowed is None:
        raise NotFound(f"unknown action {action}")
    if token.role not in allowed:
        raise PermissionDenied(f"role {token.role.value} may not {action}")


class RouteTable:
    """Ordered (path prefix -> component, roles); longest prefix wins."""

    def __init__(self, entries: List[Tuple[str, str, FrozenSet[Role]]]):
        for prefix, _, _ in entries:
            if not prefix.startswith("/"):
                raise ValueError(f"route prefix must start with /: {prefix}")
        # longest first makes the scan itself the tiebreaker
        self._entries = sorted(entries, key=lambda e: len(e[0]), reverse=True)

    def route(self, path: str) -> Optional[Tuple[str, str, FrozenSet[Role]]]:
        """(component, remaining path, roles) or None when nothing matches."""
        for prefix, component, roles in self._entries:
            if path == prefix or path.startswith(prefix if prefix.endswith("/") else prefix + "/"):
                return component, path[len(prefix):], roles
        return None

    def entries(self) -> List[Tuple[str, str, FrozenSet[Role]]]:
        return list(self._entries)


def default_route_table() -> RouteTable:
    return RouteTable(
        [
            ("/api/auth", "gateway", ALL_ROLES),
            ("/api/users", "core-domain", ADMIN_ONLY),
            ("/api/courses", "core-domain", STAFF),
            ("/api/groups", "collab", ALL_ROLES),
            ("/api/images", "vm-pool", ADMIN_ONLY),
            ("/api/setups", "booking", ALL_ROLES),
            ("/api/bookings", "booking", ALL_ROLES),
            ("/api/sessions", "session-broker", ALL_ROLES),
            ("/api/channels", "collab", ALL_ROLES),
            ("/api/me", "gateway", ALL_ROLES),
            ("/api/status", "gateway", ADMIN_ONLY),
            ("/api/debug", "gateway", ADMIN_ONLY),
            ("/api/health", "gateway", ALL_ROLES),
            ("/ws/relay", "relay", ALL_ROLES),
            ("/ws/events", "events", ALL_ROLES),
            ("/stream/camera", "collab", ALL_ROLES),
        ]
    )


def _need(payload: dict, key: str):
    if key not in payload or payload[key] is None:
        raise InvalidArgument(f"missing field: {key}")
    return payload[key]


def _error_response(exc: RemoteLabError) -> JSONResponse:
    return JSONResponse(status_code=exc.http_status, content=exc.to_payload())


def create_app(platform: LabPlatform) -> FastAPI:
    app = FastAPI(title="remotelab gateway", docs_url=None, redoc_url=None, openapi_url=None)
    routes = default_route_table()
    app.state.platform = platform
    app.state.route_table = routes

    @app.exception_handler(RemoteLabError)
    async def _domain_error(request, exc: RemoteLabError):
        return _error_response(exc)

    @app.middleware("http")
    async def _route_gate(request: Request, call_next):
        path = request.url.path
        if path.startswith(("/api/", "/stream/")) and routes.route(path) is None:
            return _error_response(NotFound(f"no route for {path}"))
        return await call_next(request)

    def bearer(authorization: Optional[str] = Header(default=None)) -> AuthToken:
        if not authorization or not authorization.startswith("Bearer "):
            raise InvalidCredentials("missing bearer token")
        return platform.auth.validate(authorization[len("Bearer "):])

    # -- resource rules ------------------------------------------------------

    def _require_course_owner(auth: AuthToken, course_id: str) -> None:
        if auth.role == Role.ADMINISTRATOR:
            return
        course = platform.store.view(lambda st: st.courses.get(course_id))
        if course is None:
            raise NotFound(f"no course {course_id}")
        if course.teacher_id != auth.user_id:
            raise PermissionDenied("not the teacher of this course")

    def _require_setup_teacher(auth: AuthToken, setup_id: str) -> None:
        if auth.role == Role.ADMINISTRATOR:
            return
        linked = platform.store.view(
            lambda st: any(
                c.teacher_id == auth.user_id and setup_id in c.setup_ids
                for c in st.courses.values()
            )
        )
        if not linked:
            raise PermissionDenied("setup is not linked to one of your courses")

    def _require_group_access(auth: AuthToken, group_id: str) -> None:
        if auth.role == Role.ADMINISTRATOR:
            return

        def check(st):
            group = st.groups.get(group_id)
            if group is None:
                raise NotFound(f"no group {group_id}")
            if auth.user_id in group.member_ids:
                return True
            course = st.courses.get(group.course_id)
            return course is not None and course.teacher_id == auth.user_id

        if not platform.store.view(check):
            raise PermissionDenied("not a member or teacher of this group")

    # -- auth ---------------------------------------------------------------

    @app.post("/api/auth/login")
    def login(payload: dict = Body(...)):
        token = platform.auth.authenticate(
            str(_need(payload, "display_name")), str(_need(payload, "secret"))
        )
        return {
            "token": token.token,
            "user_id": token.user_id,
            "role": token.role.value,
            "expires_at": iso_utc(token.expires_at),
        }

    @app.post("/api/auth/logout")
    def logout(auth: AuthToken = Depends(bearer)):
        platform.auth.revoke(auth.token)
        return {"ok": True}

    @app.get("/api/me")
    def whoami(auth: AuthToken = Depends(bearer)):
        authorize(auth, "whoami.read")

        def look(st):
            user = st.users[auth.user_id]
            groups = [
                {"id": g.id, "course_id": g.course_id, "member_ids": list(g.member_ids)}
                for g in st.groups.values()
                if auth.user_id in g.member_ids
            ]
            courses = [
                {"id": c.id, "title": c.title}
                for c in st.courses.values()
                if c.teacher_id == auth.user_id or auth.user_id in c.student_ids
            ]
            return user, groups, courses

        user, groups, courses = platform.store.view(look)
        return {
            "user": {"id": user.id, "display_name": user.display_name, "role": user.role.value},
            "groups": groups,
            "courses": courses,
        }

    # -- organization ---------------------------------------------------------

    @app.post("/api/users", status_code=201)
    def create_user(payload: dict = Body(...), auth: AuthToken = Depends(bearer)):
        authorize(auth, "users.create")
        user = platform.directory.create_user(
            str(_need(payload, "display_name")),
            Role(str(_need(payload, "role"))),
            str(_need(payload, "secret")),
        )
        return {"id": user.id, "display_name": user.display_name, "role": user.role.value}

    @app.post("/api/courses", status_code=201)
    def create_course(payload: dict = Body(...), auth: AuthToken = Depends(bearer)):
        authorize(auth, "courses.create")
        teacher_id = str(payload.get("teacher_id") or auth.user_id)
        if auth.role != Role.ADMINISTRATOR and teacher_id != auth.user_id:
            raise PermissionDenied("teachers create courses for themselves")
        course = platform.directory.create_course(teacher_id, str(_need(payload, "title")))
        return {"id": course.id, "title": course.title, "teacher_id": course.teacher_id}

    @app.post("/api/courses/{course_id}/students")
    def enroll(course_id: str, payload: dict = Body(...), auth: AuthToken = Depends(bearer)):
        authorize(auth, "courses.enroll")
        _require_course_owner(auth, course_id)
        course = platform.directory.enroll_student(course_id, str(_need(payload, "student_id")))
        return {"id": course.id, "student_ids": list(course.student_ids)}

    @app.post("/api/courses/{course_id}/setups")
    def link_setup(course_id: str, payload: dict = Body(...), auth: AuthToken = Depends(bearer)):
        authorize(auth, "courses.link_setup")
        _require_course_owner(auth, course_id)
        course = platform.directory.link_setup(course_id, str(_need(payload, "setup_id")))
        return {"id": course.id, "setup_ids": list(course.setup_ids)}

    @app.post("/api/groups", status_code=201)
    def create_group(payload: dict = Body(...), auth: AuthToken = Depends(bearer)):
        authorize(auth, "groups.create")
        course_id = str(_need(payload, "course_id"))
        _require_course_owner(auth, course_id)
        group = platform.directory.create_group(course_id, list(_need(payload, "member_ids")))
        return {"id": group.id, "course_id": group.course_id, "member_ids": list(group.member_ids)}

    @app.post("/api/images", status_code=201)
    def register_image(payload: dict = Body(...), auth: AuthToken = Depends(bearer)):
        authorize(auth, "images.register")
        content = base64.b64decode(str(_need(payload, "content_b64")))
        image = platform.register_image(str(_need(payload, "label")), content)
        return {"digest": image.digest, "label": image.label}

    @app.post("/api/setups", status_code=201)
    def register_setup(payload: dict = Body(...), auth: AuthToken = Depends(bearer)):
        authorize(auth, "setups.register")
        from .model import ChannelDescriptor

        channels = tuple(
            ChannelDescriptor.from_dict(ch) for ch in payload.get("channels", [])
        )
        setup = platform.register_setup(
            str(_need(payload, "name")),
            str(_need(payload, "base_image")),
            channels,
            str(payload.get("camera_source", "")),
        )
        return {"id": setup.id, "name": setup.name, "base_image": setup.base_image}

    # -- slots and bookings ----------------------------------------------------

    @app.get("/api/setups")
    def list_setups(auth: AuthToken = Depends(bearer)):
        authorize(auth, "slots.list")
        setups = platform.store.view(lambda st: list(st.setups.values()))
        return {
            "setups": [
                {
                    "id": s.id,
                    "name": s.name,
                    "channels": [ch.to_dict() for ch in s.channels],
                    "enabled": s.enabled,
                }
                for s in setups
            ]
        }

    @app.post("/api/setups/{setup_id}/slots", status_code=201)
    def generate_slots(setup_id: str, payload: dict = Body(...), auth: AuthToken = Depends(bearer)):
        authorize(auth, "slots.generate")
        _require_setup_teacher(auth, setup_id)
        slots = platform.scheduler.generate_slots(
            setup_id,
            parse_utc(str(_need(payload, "window_start"))),
            parse_utc(str(_need(payload, "window_end"))),
            int(_need(payload, "slot_minutes")),
        )
        return {"slots": [_slot_json(s, True) for s in slots]}

    @app.get("/api/setups/{setup_id}/slots")
    def list_slots(
        setup_id: str,
        auth: AuthToken = Depends(bearer),
        from_: Optional[str] = Query(default=None, alias="from"),
        to: Optional[str] = Query(default=None),
    ):
        authorize(auth, "slots.list")
        from datetime import timedelta

        window_from = parse_utc(from_) if from_ else platform.now()
        window_to = parse_utc(to) if to else window_from + timedelta(days=14)
        listed = platform.scheduler.list_available(setup_id, window_from, window_to)
        return {"slots": [_slot_json(slot, available) for slot, available in listed]}

    def _slot_json(slot, available: bool) -> dict:
        return {
            "id": slot.id,
            "setup_id": slot.setup_id,
            "start": iso_utc(slot.start),
            "end": iso_utc(slot.end),
            "minutes": slot.minutes,
            "available": available,
        }

    @app.post("/api/bookings", status_code=201)
    def create_booking(payload: dict = Body(...), auth: AuthToken = Depends(bearer)):
        authorize(auth, "bookings.create")
        group_id = str(_need(payload, "group_id"))
        _require_group_access(auth, group_id)
        booking = platform.scheduler.book_slot(
            group_id, str(_need(payload, "slot_id")), platform.now()
        )
        return _booking_json(booking)

    @app.get("/api/bookings/{booking_id}")
    def read_booking(booking_id: str, auth: AuthToken = Depends(bearer)):
        authorize(auth, "bookings.read")

        def look(st):
            booking = st.bookings.get(booking_id)
            if booking is None:
                raise NotFound(f"no booking {booking_id}")
            session = st.session_of_booking(booking_id)
            return booking, session

        booking, session = platform.store.view(look)
        _require_group_access(auth, booking.group_id)
        out = _booking_json(booking)
        out["session_id"] = session.id if session else None
        out["session_state"] = session.state.value if session else None
        return out

    @app.delete("/api/bookings/{booking_id}")
    def cancel_booking(booking_id: str, auth: AuthToken = Depends(bearer)):
        authorize(auth, "bookings.cancel")
        booking = platform.scheduler.cancel_booking(booking_id, auth.user_id, platform.now())
        return _booking_json(booking)

    def _booking_json(booking) -> dict:
        slot = platform.store.view(lambda st: st.slots[booking.slot_id])
        return {
            "id": booking.id,
            "slot_id": booking.slot_id,
            "group_id": booking.group_id,
            "state": booking.state.value,
            "created_at": iso_utc(booking.created_at),
            "slot": _slot_json(slot, False),
        }

    @app.get("/api/groups/{group_id}/quota")
    def quota(group_id: str, auth: AuthToken = Depends(bearer), week: Optional[str] = None):
        authorize(auth, "quota.read")
        _require_group_access(auth, group_id)
        iso_week = week or iso_week_of(platform.now())
        remaining = platform.scheduler.quota_remaining(group_id, iso_week)
        held = platform.store.view(
            lambda st: len(active_bookings_in_week(st, group_id, iso_week))
        )
        limit = platform.scheduler.policy.max_slots_per_group_per_week
        return {
            "group_id": group_id,
            "week": iso_week,
            "held": held,
            "remaining": remaining,
            "limit": limit,
        }

    @app.get("/api/groups/{group_id}/bookings")
    def group_bookings(group_id: str, auth: AuthToken = Depends(bearer)):
        authorize(auth, "bookings.read")
        _require_group_access(auth, group_id)
        bookings = platform.scheduler.group_bookings(group_id)

        def sessions(st):
            return {
                b.id: st.session_of_booking(b.id) for b in bookings
            }

        by_booking = platform.store.view(sessions)
        out = []
        for b in bookings:
            j = _booking_json(b)
            session = by_booking.get(b.id)
            j["session_id"] = session.id if session else None
            j["session_state"] = session.state.value if session else None
            out.append(j)
        return {"bookings": out}

    # -- sessions ---------------------------------------------------------------

    @app.post("/api/sessions", status_code=201)
    def start_session(payload: dict = Body(...), auth: AuthToken = Depends(bearer)):
        authorize(auth, "sessions.start")
        record = platform.broker.start_session(
            str(_need(payload, "booking_id")), auth.user_id, platform.now()
        )
        return _session_json(record)

    @app.post("/api/sessions/{session_id}/join")
    def join_session(session_id: str, auth: AuthToken = Depends(bearer)):
        authorize(auth, "sessions.join")
        token = platform.broker.join_session(session_id, auth.user_id, platform.now())
        descriptor = platform.broker.session_descriptor(session_id, token.token, platform.now())
        return {
            "participant_token": token.token,
            "expires_at": iso_utc(token.expires_at),
            "descriptor": descriptor,
        }

    @app.delete("/api/sessions/{session_id}")
    def end_session(session_id: str, auth: AuthToken = Depends(bearer)):
        authorize(auth, "sessions.end")
        record = platform.broker.end_session(session_id, auth.user_id, platform.now())
        return _session_json(record)

    @app.get("/api/sessions/{session_id}/descriptor")
    def descriptor(
        session_id: str,
        auth: AuthToken = Depends(bearer),
        x_participant_token: Optional[str] = Header(default=None),
        participant_token: Optional[str] = Query(default=None),
    ):
        authorize(auth, "sessions.descriptor")
        token = x_participant_token or participant_token
        if not token:
            raise TokenInvalid("participant token required")
        return platform.broker.session_descriptor(session_id, token, platform.now())

    def _session_json(record) -> dict:
        return {
            "id": record.id,
            "booking_id": record.booking_id,
            "state": record.state.value,
            "started_at": iso_utc(record.started_at),
            "ended_at": iso_utc(record.ended_at) if record.ended_at else None,
            "conference_room": record.conference_room,
            "participant_ids": list(record.participant_ids),
        }

    # -- chat --------------------------------------------------------------------

    @app.post("/api/groups/{group_id}/chat", status_code=201)
    def post_chat(group_id: str, payload: dict = Body(...), auth: AuthToken = Depends(bearer)):
        authorize(auth, "chat.post")
        msg = platform.chat.post_message(
            group_id, auth.user_id, str(_need(payload, "body")), platform.now()
        )
        return _chat_json(msg)

    @app.get("/api/groups/{group_id}/chat")
    def chat_history(
        group_id: str,
        auth: AuthToken = Depends(bearer),
        after: int = 0,
        limit: int = 100,
    ):
        authorize(auth, "chat.read")
        msgs = platform.chat.history(group_id, auth.user_id, after_seq=after, limit=limit)
        return {"messages": [_chat_json(m) for m in msgs]}

    def _chat_json(m) -> dict:
        return {
            "id": m.id,
            "group_id": m.group_id,
            "author": m.author,
            "body": m.body,
            "at": iso_utc(m.at),
            "seq": m.seq,
        }

    # -- hardware channels ---------------------------------------------------------

    @app.get("/api/setups/{setup_id}/channels")
    def list_channels(setup_id: str, auth: AuthToken = Depends(bearer)):
        authorize(auth, "channels.list")
        setup = platform.store.view(lambda st: st.setups.get(setup_id))
        if setup is None:
            raise NotFound(f"no setup {setup_id}")
        return {"channels": [ch.to_dict() for ch in setup.channels]}

    @app.get("/api/channels/{channel_id}/read")
    def read_channel(
        channel_id: str,
        auth: AuthToken = Depends(bearer),
        x_participant_token: Optional[str] = Header(default=None),
        participant_token: Optional[str] = Query(default=None),
    ):
        authorize(auth, "channels.read")
        token = x_participant_token or participant_token
        if not token:
            raise TokenInvalid("participant token required")
        setup, _ = platform.directory.find_channel(channel_id)
        value, at = platform.hardware.read_sensor(setup.id, channel_id, token, platform.now())
        return {"channel_id": channel_id, "value": value, "at": iso_utc(at)}

    @app.post("/api/channels/{channel_id}/write")
    def write_channel(channel_id: str, payload: dict = Body(...), auth: AuthToken = Depends(bearer)):
        authorize(auth, "channels.write")
        token = str(_need(payload, "participant_token"))
        setup, _ = platform.directory.find_channel(channel_id)
        applied = platform.hardware.set_actuator(
            setup.id, channel_id, _need(payload, "value"), token, platform.now()
        )
        return {"channel_id": channel_id, "value": applied}

    # -- operational ---------------------------------------------------------------

    @app.get("/api/health")
    def health():
        return {"ok": True, "seq": platform.store.last_seq}

    @app.get("/api/status")
    def status(auth: AuthToken = Depends(bearer)):
        authorize(auth, "status.read")
        setups = platform.store.view(lambda st: list(st.setups))
        return {
            "pools": {sid: platform.pool.pool_status(sid) for sid in setups},
            "live_rooms": platform.rooms.live_rooms(),
            "relay": platform.relay.census(),
            "subscribers": platform.bus.subscriber_count(),
            "notices": [list(n) for n in platform.broker.notices],
            "seq": platform.store.last_seq,
        }

    @app.get("/api/debug/desktop/{session_id}")
    def debug_desktop(session_id: str, auth: AuthToken = Depends(bearer)):
        authorize(auth, "debug.desktop")
        desktop = platform.desktop_for_session(session_id)
        if desktop is None:
            raise NotFound(f"no live desktop for session {session_id}")
        inputs = [
            {
                "kind": InputKind(m.event.kind).name,
                "relay_seq": m.relay_seq,
                "client_tag": m.client_tag,
                "client_seq": m.event.client_seq,
                "fields": list(m.event.fields()),
            }
            for m in desktop.received_inputs()
        ]
        return {"inputs": inputs, "last_frame_id": desktop.last_frame_id}

    # -- sockets ----------------------------------------------------------------

    @app.websocket("/ws/relay/{session_id}")
    async def ws_relay(websocket: WebSocket, session_id: str):
        token = websocket.query_params.get("token", "")
        try:
            await asyncio.to_thread(
                platform.broker.validate_token, token, platform.now(), session_id
            )
            relay = platform.relay.relay_for(session_id)
            channel = await asyncio.to_thread(relay.attach)
        except RemoteLabError as exc:
            await websocket.close(code=4403, reason=exc.code)
            return
        await websocket.accept()

        async def pump_out():
            # sender half; exits once the channel closes or the peer is gone
            try:
                while True:
                    data = await asyncio.to_thread(channel.next_outbound, 0.2)
                    if data is not None:
                        await websocket.send_bytes(data)
                    elif channel.closed:
                        return
            except Exception:
                return

        sender = asyncio.create_task(pump_out())
        try:
            while True:
                data = await websocket.receive_bytes()
                await asyncio.to_thread(relay.handle_client_bytes, channel, data)
        except WebSocketDisconnect:
            pass
        except RemoteLabError as exc:
            logger.info("relay socket %s rejected input: %s", session_id, exc)
            try:
                await websocket.close(code=4409, reason=exc.code)
            except RuntimeError:
                pass
        finally:
            platform.relay.detach_client(channel)  # closes channel; sender exits
            sender.cancel()

    @app.websocket("/ws/events")
    async def ws_events(websocket: WebSocket):
        token = websocket.query_params.get("token", "")
        try:
            auth = await asyncio.to_thread(platform.auth.validate, token)
            authorize(auth, "events.subscribe")
        except RemoteLabError as exc:
            await websocket.close(code=4403, reason=exc.code)
            return
        await websocket.accept()
        sub = platform.bus.subscribe(auth.user_id)

        async def pump_out():
            try:
                while True:
                    event = await asyncio.to_thread(sub.get, 0.2)
                    if event is not None:
                        await websocket.send_text(json.dumps(event))
                    elif sub.closed.is_set():
                        return
            except Exception:
                return

        sender = asyncio.create_task(pump_out())
        try:
            while True:
                await websocket.receive_text()  # client pings; content ignored
        except WebSocketDisconnect:
            pass
        finally:
            platform.bus.unsubscribe(sub)  # closes the queue; sender exits
            sender.cancel()

    @app.get("/stream/camera/{session_id}")
    def camera_stream(
        session_id: str,
        token: str = Query(default=""),
        frames: Optional[int] = Query(default=None),
    ):
        platform.broker.validate_token(token, platform.now(), session_id)
        boundary = "frame"

        def generate():
            sent = 0
            while frames is None or sent < frames:
                try:
                    platform.broker.validate_token(token, platform.now(), session_id)
                except RemoteLabError:
                    return
                at, jpeg = platform.camera.next_frame()
                part = (
                    f"--{boundary}\r\n"
                    f"Content-Type: image/jpeg\r\n"
                    f"Content-Length: {len(jpeg)}\r\n"
                    f"X-Timestamp: {iso_utc(at)}\r\n\r\n"
                ).encode() + jpeg + b"\r\n"
                yield part
                sent += 1
                time.sleep(0.1)

        return StreamingResponse(
            generate(), media_type=f"multipart/x-mixed-replace; boundary={boundary}"
        )

    return app
