"""Directory operations, group rules, setup registration, login tokens."""

from datetime import timedelta

import pytest

from remotelab.auth import AuthService, hash_credential, verify_credential
from remotelab.domain import Directory, GroupBounds
from remotelab.errors import (
    AlreadyGrouped,
    DuplicateName,
    GroupSizeViolation,
    InvalidArgument,
    InvalidCredentials,
    NotEnrolled,
    NotFound,
    PermissionDenied,
    TokenExpired,
    UnknownImage,
)
from remotelab.model import ChannelDescriptor, ChannelDatatype, ChannelKind, Role
from remotelab.util import ManualClock
from remotelab.vmpool import register_image

from conftest import MONDAY


@pytest.fixture
def directory(store):
    return Directory(store)


@pytest.fixture
def teacher(directory):
    return directory.create_user("ms-ohm", Role.TEACHER, "volts")


@pytest.fixture
def course(directory, teacher):
    return directory.create_course(teacher.id, "Circuits")


def enroll(directory, course, n):
    students = [directory.create_user(f"s{i:02d}", Role.STUDENT, f"pw{i}") for i in range(n)]
    for s in students:
        directory.enroll_student(course.id, s.id)
    return students


class TestUsers:
    def test_create_and_fetch(self, directory):
        u = directory.create_user("ada", Role.STUDENT, "pw")
        assert directory.get_user(u.id).display_name == "ada"
        assert u.role == Role.STUDENT

    def test_duplicate_name_same_role_rejected(self, directory):
        directory.create_user("ada", Role.STUDENT, "pw")
        with pytest.raises(DuplicateName):
            directory.create_user("ada", Role.STUDENT, "pw2")

    def test_same_name_different_role_allowed(self, directory):
        directory.create_user("ada", Role.STUDENT, "pw")
        directory.create_user("ada", Role.TEACHER, "pw")

    def test_empty_name_rejected(self, directory):
        with pytest.raises(InvalidArgument):
            directory.create_user("", Role.STUDENT, "pw")

    def test_secret_is_not_stored_in_clear(self, directory, store):
        directory.create_user("ada", Role.STUDENT, "hunter2")
        assert b"hunter2" not in store.events_path.read_bytes()

    def test_unknown_user_lookup(self, directory):
        with pytest.raises(NotFound):
            directory.get_user("nope")


class TestCourses:
    def test_course_owner_must_be_teacher(self, directory):
        s = directory.create_user("stu", Role.STUDENT, "pw")
        with pytest.raises(PermissionDenied):
            directory.create_course(s.id, "Sneaky")

    def test_enrollment_requires_student_role(self, directory, course, teacher):
        with pytest.raises(PermissionDenied):
            directory.enroll_student(course.id, teacher.id)

    def test_enroll_unknown_user(self, directory, course):
        with pytest.raises(NotFound):
            directory.enroll_student(course.id, "ghost")

    def test_enroll_is_idempotent(self, directory, course, store):
        (s,) = enroll(directory, course, 1)
        directory.enroll_student(course.id, s.id)
        ids = store.view(lambda st: st.courses[course.id].student_ids)
        assert ids == (s.id,)


class TestGroups:
    def test_members_must_be_enrolled(self, directory, course):
        outsider = directory.create_user("out", Role.STUDENT, "pw")
        (s,) = enroll(directory, course, 1)
        with pytest.raises(NotEnrolled):
            directory.create_group(course.id, [s.id, outsider.id])

    def test_size_bounds(self, directory, course):
        students = enroll(directory, course, 7)
        with pytest.raises(GroupSizeViolation):
            directory.create_group(course.id, [students[0].id])
        with pytest.raises(GroupSizeViolation):
            directory.create_group(course.id, [s.id for s in students[:6]])
        g = directory.create_group(course.id, [s.id for s in students[:2]])
        assert set(g.member_ids) == {students[0].id, students[1].id}

    def test_custom_bounds(self, store, directory, course):
        tight = Directory(store, GroupBounds(min_size=1, max_size=1))
        (s,) = enroll(directory, course, 1)
        g = tight.create_group(course.id, [s.id])
        assert g.member_ids == (s.id,)

    def test_one_group_per_student_per_course(self, directory, course):
        students = enroll(directory, course, 4)
        directory.create_group(course.id, [s.id for s in students[:2]])
        with pytest.raises(AlreadyGrouped):
            directory.create_group(course.id, [students[1].id, students[2].id])

    def test_duplicate_members_collapse_before_size_check(self, directory, course):
        students = enroll(directory, course, 2)
        with pytest.raises(GroupSizeViolation):
            directory.create_group(course.id, [students[0].id, students[0].id])
        g = directory.create_group(course.id, [students[0].id, students[0].id, students[1].id])
        assert g.member_ids == (students[0].id, students[1].id)


class TestSetups:
    def channels(self):
        return (
            ChannelDescriptor("b.temp", ChannelKind.SENSOR, ChannelDatatype.FLOAT, "C", (15.0, 45.0)),
            ChannelDescriptor("b.led", ChannelKind.ACTUATOR, ChannelDatatype.BOOL),
        )

    def test_register_requires_known_image(self, directory):
        with pytest.raises(UnknownImage):
            directory.register_lab_setup("bench", "deadbeef", channels=self.channels())

    def test_register_and_find_channel(self, directory, store):
        image = register_image(store, "base", b"\x01" * 16)
        setup = directory.register_lab_setup("bench", image.digest, channels=self.channels())
        found_setup, desc = directory.find_channel("b.led")
        assert found_setup.id == setup.id
        assert desc.kind == ChannelKind.ACTUATOR and desc.datatype == ChannelDatatype.BOOL
        with pytest.raises(NotFound):
            directory.find_channel("b.nope")

    def test_float_channel_needs_bounds(self, directory, store):
        image = register_image(store, "base", b"\x01" * 16)
        bad = (ChannelDescriptor("b.v", ChannelKind.SENSOR, ChannelDatatype.FLOAT, "V", None),)
        with pytest.raises(InvalidArgument):
            directory.register_lab_setup("bench", image.digest, channels=bad)

    def test_bool_channel_must_not_have_bounds(self, directory, store):
        image = register_image(store, "base", b"\x01" * 16)
        bad = (ChannelDescriptor("b.sw", ChannelKind.ACTUATOR, ChannelDatatype.BOOL, "", (0.0, 1.0)),)
        with pytest.raises(InvalidArgument):
            directory.register_lab_setup("bench", image.digest, channels=bad)

    def test_duplicate_channel_ids_rejected(self, directory, store):
        image = register_image(store, "base", b"\x01" * 16)
        dup = self.channels() + (ChannelDescriptor("b.temp", ChannelKind.SENSOR, ChannelDatatype.FLOAT, "C", (0.0, 1.0)),)
        with pytest.raises(InvalidArgument):
            directory.register_lab_setup("bench", image.digest, channels=dup)

    def test_descriptor_dict_round_trip(self):
        for desc in self.channels():
            assert ChannelDescriptor.from_dict(desc.to_dict()) == desc


class TestCredentials:
    def test_hash_verifies_and_salts_differ(self):
        a, b = hash_credential("pw"), hash_credential("pw")
        assert a.salt != b.salt and a.hash != b.hash
        assert verify_credential(a, "pw") and verify_credential(b, "pw")
        assert not verify_credential(a, "pW")


class TestAuthService:
    @pytest.fixture
    def auth(self, store, clock, directory):
        directory.create_user("ada", Role.STUDENT, "pw")
        return AuthService(store, clock, lifetime_hours=2.0)

    def test_login_and_validate(self, auth):
        tok = auth.authenticate("ada", "pw")
        info = auth.validate(tok.token)
        assert info.role == Role.STUDENT
        assert info.expires_at - info.issued_at == timedelta(hours=2)

    def test_wrong_password_and_unknown_user_look_alike(self, auth):
        with pytest.raises(InvalidCredentials) as wrong:
            auth.authenticate("ada", "nope")
        with pytest.raises(InvalidCredentials) as ghost:
            auth.authenticate("nobody", "nope")
        assert str(wrong.value) == str(ghost.value)

    def test_token_expiry_uses_clock(self, auth, clock):
        tok = auth.authenticate("ada", "pw")
        clock.advance(hours=2, seconds=1)
        with pytest.raises(TokenExpired):
            auth.validate(tok.token)

    def test_revoked_token_is_unknown(self, auth):
        tok = auth.authenticate("ada", "pw")
        auth.revoke(tok.token)
        with pytest.raises(InvalidCredentials):
            auth.validate(tok.token)

    def test_tokens_do_not_survive_restart(self, tmp_path, clock):
        from remotelab.persistence import EventStore

        store = EventStore(tmp_path / "d", fsync=False)
        Directory(store).create_user("ada", Role.STUDENT, "pw")
        tok = AuthService(store, clock).authenticate("ada", "pw")
        store.close()

        reopened = EventStore(tmp_path / "d", fsync=False)
        fresh = AuthService(reopened, clock)
        with pytest.raises(InvalidCredentials):
            fresh.validate(tok.token)
        assert fresh.authenticate("ada", "pw").user_id == tok.user_id
        reopened.close()
