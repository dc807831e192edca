"""Session lifecycle: start windows, eligibility, teardown, sweep, tokens."""

from datetime import timedelta

import pytest

from remotelab.errors import (
    AlreadyStarted,
    ConnectFailed,
    InvalidState,
    NotFound,
    NotParticipantEligible,
    SessionNotActive,
    TokenInvalid,
    TooEarly,
    TooLate,
)
from remotelab.model import SessionState
from remotelab.vmpool import VmState

from conftest import MONDAY


@pytest.fixture
def booked(world):
    """An active booking for group 0 on the first slot (09:00-10:00)."""
    return world.platform.scheduler.book_slot(
        world.groups[0].id, world.slots[0].id, MONDAY
    )


@pytest.fixture
def broker(world):
    return world.platform.broker


def session_state(world, session_id):
    return world.platform.store.view(lambda st: st.sessions[session_id].state)


class TestStartWindow:
    def test_too_early_before_grace(self, world, broker, booked):
        slot_start = world.slots[0].start
        with pytest.raises(TooEarly):
            broker.start_session(booked.id, world.students[0].id, slot_start - timedelta(minutes=6))

    def test_grace_opens_five_minutes_early(self, world, broker, booked):
        slot_start = world.slots[0].start
        s = broker.start_session(booked.id, world.students[0].id, slot_start - timedelta(minutes=5))
        assert s.state == SessionState.ACTIVE

    def test_late_start_allowed_until_slot_end(self, world, broker, booked):
        nearly_over = world.slots[0].end - timedelta(minutes=1)
        s = broker.start_session(booked.id, world.students[0].id, nearly_over)
        assert s.state == SessionState.ACTIVE

    def test_too_late_at_slot_end(self, world, broker, booked):
        with pytest.raises(TooLate):
            broker.start_session(booked.id, world.students[0].id, world.slots[0].end)

    def test_double_start_rejected(self, world, broker, booked):
        at = world.slots[0].start
        broker.start_session(booked.id, world.students[0].id, at)
        with pytest.raises(AlreadyStarted):
            broker.start_session(booked.id, world.students[1].id, at)

    def test_cancelled_booking_not_startable(self, world, broker, booked):
        world.platform.scheduler.cancel_booking(booked.id, world.admin.id, MONDAY)
        with pytest.raises(InvalidState):
            broker.start_session(booked.id, world.students[0].id, world.slots[0].start)

    def test_unknown_booking(self, broker):
        with pytest.raises(NotFound):
            broker.start_session("nope", None, MONDAY)


class TestEligibility:
    def test_outside_student_may_not_start(self, world, broker, booked):
        with pytest.raises(NotParticipantEligible):
            broker.start_session(booked.id, world.students[2].id, world.slots[0].start)

    def test_teacher_and_admin_may_start(self, world, broker):
        sched = world.platform.scheduler
        for caller, slot in ((world.teacher, world.slots[0]), (world.admin, world.slots[1])):
            b = sched.book_slot(world.groups[1].id, slot.id, MONDAY)
            s = broker.start_session(b.id, caller.id, slot.start)
            broker.end_session(s.id, caller.id, slot.start + timedelta(minutes=10))

    def test_join_requires_membership(self, world, broker, booked):
        s = broker.start_session(booked.id, world.students[0].id, world.slots[0].start)
        with pytest.raises(NotParticipantEligible):
            broker.join_session(s.id, world.students[2].id, world.slots[0].start)
        tok = broker.join_session(s.id, world.students[1].id, world.slots[0].start)
        assert tok.session_id == s.id

    def test_join_records_each_participant_once(self, world, broker, booked):
        at = world.slots[0].start
        s = broker.start_session(booked.id, world.students[0].id, at)
        for _ in range(3):
            broker.join_session(s.id, world.students[0].id, at)
        participants = world.platform.store.view(
            lambda st: st.sessions[s.id].participant_ids
        )
        assert participants == (world.students[0].id,)
        assert broker.token_count(s.id) == 3  # one token per join call


class TestStartSideEffects:
    def test_start_binds_fresh_vm_and_room(self, world, broker, booked):
        at = world.slots[0].start
        s = broker.start_session(booked.id, world.students[0].id, at)
        vm = world.platform.pool.get(s.vm_id)
        assert vm.state == VmState.ASSIGNED and vm.session_id == s.id
        assert world.platform.hypervisor.disk_digest(s.vm_id) == world.image.digest
        assert world.platform.rooms.live_rooms() == 1
        assert world.platform.relay.census() == {s.id: 0}

    def test_failed_upstream_connect_compensates_everything(self, world, broker, booked, monkeypatch):
        at = world.slots[0].start

        def refuse(session_id, endpoint):
            raise ConnectFailed("nothing listening")

        monkeypatch.setattr(world.platform.relay, "open_upstream", refuse)
        with pytest.raises(ConnectFailed):
            broker.start_session(booked.id, world.students[0].id, at)

        assert world.platform.store.view(lambda st: len(st.sessions)) == 0
        assert world.platform.rooms.live_rooms() == 0
        states = [h.state for h in world.platform.pool.all_handles()]
        assert states == [VmState.AVAILABLE]
        assert any("upstream" in what for _, what in broker.notices)

        monkeypatch.undo()
        s = broker.start_session(booked.id, world.students[0].id, at)  # booking recovers
        assert s.state == SessionState.ACTIVE

    def test_room_failure_releases_vm(self, world, broker, booked):
        world.platform.faults.fail("create_room", on_call=1)
        with pytest.raises(Exception):
            broker.start_session(booked.id, world.students[0].id, world.slots[0].start)
        states = [h.state for h in world.platform.pool.all_handles()]
        assert states == [VmState.AVAILABLE]
        assert world.platform.store.view(lambda st: len(st.sessions)) == 0


class TestEnd:
    def start(self, world, broker, booked):
        at = world.slots[0].start
        s = broker.start_session(booked.id, world.students[0].id, at)
        tok = broker.join_session(s.id, world.students[0].id, at)
        return s, tok, at

    def test_end_resets_vm_and_balances_rooms(self, world, broker, booked):
        s, tok, at = self.start(world, broker, booked)
        hv = world.platform.hypervisor
        hv.mutate_disk(s.vm_id, b"leftover state")
        assert hv.disk_digest(s.vm_id) != world.image.digest

        broker.end_session(s.id, world.students[0].id, at + timedelta(minutes=30))

        assert session_state(world, s.id) == SessionState.ENDED
        assert hv.disk_digest(s.vm_id) == world.image.digest
        assert world.platform.rooms.live_rooms() == 0
        log = world.platform.call_log
        assert log.count("create_room") == log.count("destroy_room") == 1
        assert world.platform.relay.census() == {}

    def test_end_invalidates_tokens(self, world, broker, booked):
        s, tok, at = self.start(world, broker, booked)
        assert broker.validate_token(tok.token, at).user_id == world.students[0].id
        broker.end_session(s.id, world.students[0].id, at + timedelta(minutes=30))
        with pytest.raises(TokenInvalid):
            broker.validate_token(tok.token, at + timedelta(minutes=31))
        assert broker.token_count(s.id) == 0

    def test_end_is_idempotent(self, world, broker, booked):
        s, tok, at = self.start(world, broker, booked)
        first = broker.end_session(s.id, world.students[0].id, at + timedelta(minutes=30))
        again = broker.end_session(s.id, world.students[0].id, at + timedelta(minutes=40))
        assert first.state == again.state == SessionState.ENDED
        assert again.ended_at == first.ended_at

    def test_outsider_may_not_end(self, world, broker, booked):
        s, tok, at = self.start(world, broker, booked)
        with pytest.raises(NotParticipantEligible):
            broker.end_session(s.id, world.students[2].id, at + timedelta(minutes=5))

    def test_join_after_end_rejected(self, world, broker, booked):
        s, tok, at = self.start(world, broker, booked)
        broker.end_session(s.id, None, at + timedelta(minutes=30))
        with pytest.raises(SessionNotActive):
            broker.join_session(s.id, world.students[1].id, at + timedelta(minutes=31))


class TestSweep:
    def test_sweep_reclaims_only_past_grace(self, world, broker, booked, clock):
        at = world.slots[0].start
        s = broker.start_session(booked.id, world.students[0].id, at)
        slot_end = world.slots[0].end

        clock.set(slot_end + timedelta(minutes=4, seconds=59))
        assert broker.sweep(clock.now()) == []
        assert session_state(world, s.id) == SessionState.ACTIVE

        clock.set(slot_end + timedelta(minutes=5))
        assert broker.sweep(clock.now()) == [s.id]
        assert session_state(world, s.id) == SessionState.ENDED
        assert world.platform.hypervisor.disk_digest(s.vm_id) == world.image.digest

        assert broker.sweep(clock.now()) == []  # nothing left to reclaim

    def test_platform_sweep_also_recycles_orphan_vms(self, world, clock):
        # a VM assigned but with no live session is stale for the pool sweep
        vm = world.platform.pool.acquire(world.setup.id)
        world.platform.sweep()
        assert world.platform.pool.get(vm.id).state == VmState.AVAILABLE


class TestTokens:
    def test_token_expiry_is_slot_end_plus_grace(self, world, broker, booked):
        at = world.slots[0].start
        s = broker.start_session(booked.id, world.students[0].id, at)
        tok = broker.join_session(s.id, world.students[0].id, at)
        assert tok.expires_at == world.slots[0].end + timedelta(minutes=5)

        with pytest.raises(TokenInvalid):
            broker.validate_token(tok.token, tok.expires_at)
        assert broker.validate_token(tok.token, tok.expires_at - timedelta(seconds=1))

    def test_wrong_session_and_garbage_tokens(self, world, broker, booked):
        at = world.slots[0].start
        s = broker.start_session(booked.id, world.students[0].id, at)
        tok = broker.join_session(s.id, world.students[0].id, at)
        with pytest.raises(TokenInvalid):
            broker.validate_token(tok.token, at, session_id="sess-other")
        with pytest.raises(TokenInvalid):
            broker.validate_token("garbage", at)

    def test_resolve_token_setup(self, world, broker, booked):
        at = world.slots[0].start
        s = broker.start_session(booked.id, world.students[0].id, at)
        tok = broker.join_session(s.id, world.students[0].id, at)
        assert broker.resolve_token_setup(tok.token, at) == (
            world.setup.id,
            s.id,
            world.students[0].id,
        )

    def test_descriptor_lists_everything_a_client_needs(self, world, broker, booked):
        at = world.slots[0].start
        s = broker.start_session(booked.id, world.students[0].id, at)
        tok = broker.join_session(s.id, world.students[0].id, at)
        desc = broker.session_descriptor(s.id, tok.token, at)
        assert desc["relay_path"] == f"/ws/relay/{s.id}"
        assert desc["camera_path"] == f"/stream/camera/{s.id}"
        assert desc["chat_group_id"] == world.groups[0].id
        assert desc["conference"]["url"].endswith(desc["conference"]["room_id"])
        assert {ch["channel_id"] for ch in desc["channels"]} == {"temp", "led", "dac"}
        assert desc["slot"] == {
            "start": "2026-08-10T09:00:00Z",
            "end": "2026-08-10T10:00:00Z",
        }


class TestRestartRecovery:
    def test_orphaned_session_is_ended_on_startup(self, make_platform, clock):
        from conftest import build_world

        first = make_platform("site")
        w = build_world(first)
        booking = first.scheduler.book_slot(w.groups[0].id, w.slots[0].id, MONDAY)
        at = w.slots[0].start
        s = first.broker.start_session(booking.id, w.students[0].id, at)
        first.close()  # process dies without ending the session

        second = make_platform("site")
        assert second.store.view(lambda st: st.sessions[s.id].state) == SessionState.ACTIVE
        orphans = second.recover_orphans()
        assert orphans == [s.id]
        assert second.store.view(lambda st: st.sessions[s.id].state) == SessionState.ENDED

        # the booking's slot is spent, but new bookings proceed normally
        b2 = second.scheduler.book_slot(w.groups[0].id, w.slots[1].id, clock.now())
        s2 = second.broker.start_session(b2.id, w.students[0].id, w.slots[1].start)
        assert s2.state == SessionState.ACTIVE
