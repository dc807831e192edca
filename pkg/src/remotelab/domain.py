"""Organization directory: users, courses, groups, lab setups.

Operations validate referential preconditions and commit domain events
atomically inside a store transaction.  Role-based access (who may call
what) is mediated by the gateway's permission matrix; operations here
additionally enforce the role constraints that are part of the data model
itself (a course's teacher must hold the Teacher role, and so on).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence

from . import auth
from .errors import (
    AlreadyGrouped,
    DuplicateName,
    GroupSizeViolation,
    InvalidArgument,
    NotEnrolled,
    NotFound,
    PermissionDenied,
    UnknownImage,
)
from .model import ChannelDescriptor, ChannelDatatype, Course, Group, LabSetup, Role, User
from .persistence import EventStore
from .util import new_id

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GroupBounds:
    min_size: int = 2
    max_size: int = 5


class Directory:
    def __init__(self, store: EventStore, group_bounds: GroupBounds = GroupBounds()):
        self._store = store
        self.group_bounds = group_bounds

    # -- users ----------------------------------------------------------

    def create_user(self, display_name: str, role: Role, secret: str) -> User:
        if not display_name or not display_name.strip():
            raise InvalidArgument("display_name must be non-empty")
        if not isinstance(role, Role):
            role = Role(role)
        credential = auth.hash_credential(secret)

        def txn(tx):
            if (display_name, role.value) in tx.state.user_names:
                raise DuplicateName(f"user {display_name!r} with role {role.value} exists")
            user_id = new_id("u")
            tx.commit(
                "user.created",
                {
                    "user_id": user_id,
                    "display_name": display_name,
                    "role": role.value,
                    "credential": {
                        "algo": credential.algo,
                        "salt": credential.salt,
                        "hash": credential.hash,
                    },
                },
            )
            return tx.state.users[user_id]

        return self._store.transact(txn)

    def get_user(self, user_id: str) -> User:
        user = self._store.view(lambda st: st.users.get(user_id))
        if user is None:
            raise NotFound(f"no user {user_id}")
        return user

    # -- courses ----------------------------------------------------------

    def create_course(self, teacher_id: str, title: str) -> Course:
        if not title or not title.strip():
            raise InvalidArgument("title must be non-empty")

        def txn(tx):
            teacher = tx.state.users.get(teacher_id)
            if teacher is None:
                raise NotFound(f"no user {teacher_id}")
            if teacher.role != Role.TEACHER:
                raise PermissionDenied("course owner must hold the Teacher role")
            course_id = new_id("c")
            tx.commit(
                "course.created",
                {"course_id": course_id, "title": title, "teacher_id": teacher_id},
            )
            return tx.state.courses[course_id]

        return self._store.transact(txn)

    def enroll_student(self, course_id: str, student_id: str) -> Course:
        def txn(tx):
            course = tx.state.courses.get(course_id)
            if course is None:
                raise NotFound(f"no course {course_id}")
            student = tx.state.users.get(student_id)
            if student is None:
                raise NotFound(f"no user {student_id}")
            if student.role != Role.STUDENT:
                raise PermissionDenied("only students can be enrolled")
            if student_id not in course.student_ids:
                tx.commit(
                    "course.student_enrolled",
                    {"course_id": course_id, "student_id": student_id},
                )
            return tx.state.courses[course_id]

        return self._store.transact(txn)

    def link_setup(self, course_id: str, setup_id: str) -> Course:
        def txn(tx):
            course = tx.state.courses.get(course_id)
            if course is None:
                raise NotFound(f"no course {course_id}")
            if setup_id not in tx.state.setups:
                raise NotFound(f"no setup {setup_id}")
            if setup_id not in course.setup_ids:
                tx.commit(
                    "course.setup_linked", {"course_id": course_id, "setup_id": setup_id}
                )
            return tx.state.courses[course_id]

        return self._store.transact(txn)

    # -- groups ----------------------------------------------------------

    def create_group(self, course_id: str, member_ids: Sequence[str]) -> Group:
        members: List[str] = list(dict.fromkeys(member_ids))  # dedupe, keep order
        bounds = self.group_bounds

        def txn(tx):
            course = tx.state.courses.get(course_id)
            if course is None:
                raise NotFound(f"no course {course_id}")
            if not bounds.min_size <= len(members) <= bounds.max_size:
                raise GroupSizeViolation(
                    f"group size {len(members)} outside [{bounds.min_size}, {bounds.max_size}]"
                )
            for uid in members:
                if uid not in course.student_ids:
                    raise NotEnrolled(f"user {uid} not enrolled in {course_id}")
                existing = tx.state.group_for_member(course_id, uid)
                if existing is not None:
                    raise AlreadyGrouped(f"user {uid} already in group {existing.id}")
            group_id = new_id("g")
            tx.commit(
                "group.created",
                {"group_id": group_id, "course_id": course_id, "member_ids": members},
            )
            return tx.state.groups[group_id]

        return self._store.transact(txn)

    # -- lab setups ---------------------------------------------------------

    def register_lab_setup(
        self,
        name: str,
        base_image: str,
        channels: Sequence[ChannelDescriptor] = (),
        camera_source: str = "",
    ) -> LabSetup:
        if not name or not name.strip():
            raise InvalidArgument("name must be non-empty")
        for ch in channels:
            if ch.datatype == ChannelDatatype.FLOAT:
                if ch.bounds is None or not ch.bounds[0] < ch.bounds[1]:
                    raise InvalidArgument(f"float channel {ch.channel_id} needs bounds [min, max]")
            elif ch.bounds is not None:
                raise InvalidArgument(f"bool channel {ch.channel_id} must not declare bounds")
        ids = [ch.channel_id for ch in channels]
        if len(set(ids)) != len(ids):
            raise InvalidArgument("duplicate channel ids in setup")

        def txn(tx):
            if base_image not in tx.state.images:
                raise UnknownImage(f"image digest {base_image} not registered")
            # channel ids address channels globally at the gateway
            for setup in tx.state.setups.values():
                for ch in setup.channels:
                    if ch.channel_id in ids:
                        raise InvalidArgument(
                            f"channel id {ch.channel_id} already used by setup {setup.id}"
                        )
            setup_id = new_id("s")
            tx.commit(
                "setup.registered",
                {
                    "setup_id": setup_id,
                    "name": name,
                    "base_image": base_image,
                    "channels": [ch.to_dict() for ch in channels],
                    "camera_source": camera_source,
                    "enabled": True,
                },
            )
            return tx.state.setups[setup_id]

        return self._store.transact(txn)

    def find_channel(self, channel_id: str):
        """Resolve a globally unique channel id to (setup, descriptor)."""

        def look(st) -> Optional[tuple]:
            for setup in st.setups.values():
                for ch in setup.channels:
                    if ch.channel_id == channel_id:
                        return setup, ch
            return None

        found = self._store.view(look)
        if found is None:
            raise NotFound(f"no channel {channel_id}")
        return found
