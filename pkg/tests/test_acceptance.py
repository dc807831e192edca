"""Product gates: one test per release criterion, each with a time budget.

Every test re-derives its verdict from raw artifacts (the event log, the
upstream input capture, disk digests) through the oracles module rather
than trusting the code under test, and prints a single PASS line with the
measured runtime.
"""

import hashlib
import json
import os
import random
import signal
import subprocess
import sys
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from datetime import timedelta
from pathlib import Path

import pytest
from fastapi.testclient import TestClient

from conftest import MONDAY, build_world
from oracles import (
    booking_history_violations,
    check_merge_order,
    recount_bookings,
    scan_log_seqs,
)
from remotelab.booking import QuotaPolicy, Scheduler
from remotelab.domain import Directory
from remotelab.errors import QuotaExceeded, SlotTaken, TokenInvalid
from remotelab.gateway import MUTATING_ACTIONS, PERMISSIONS, create_app
from remotelab.model import Role, SessionState, State
from remotelab.persistence import EventStore, read_log
from remotelab.relay import RelayHub
from remotelab.simdrivers import SimDesktopServer
from remotelab.vmpool import VmState, register_image
from remotelab.wire import InputEvent, InputKind, Opcode, decode_frame, decode_message


def finish(label: str, t0: float, budget: float) -> None:
    elapsed = time.monotonic() - t0
    assert elapsed < budget, f"{label} took {elapsed:.2f}s, budget {budget}s"
    print(f"PASS {label}: {elapsed:.2f}s (budget {budget}s)")


def test_scenario_replay_holds_booking_invariants(make_platform):
    """42 students in 20 groups share 3 setups for a week of hourly slots;
    500 randomized booking/cancel requests must never double-book a slot,
    never push a group past its weekly quota of 2, and never produce a
    booking whose group is not course-linked to the setup."""
    t0 = time.monotonic()
    p = make_platform("accept-replay")
    d = p.directory

    teacher = d.create_user("prof", Role.TEACHER, "pw-prof")
    students = [d.create_user(f"st{i:02d}", Role.STUDENT, f"pw{i:02d}") for i in range(42)]
    course = d.create_course(teacher.id, "Digital Design Lab")
    for s in students:
        d.enroll_student(course.id, s.id)
    sizes = [3, 3] + [2] * 18  # 20 groups, 42 members
    groups, cursor = [], 0
    for size in sizes:
        groups.append(d.create_group(course.id, [s.id for s in students[cursor:cursor + size]]))
        cursor += size
    assert len(groups) == 20 and cursor == 42

    image = p.register_image("zybo-base", b"zybo-base-image" * 64)
    setups = [p.register_setup(f"board-{n}", image.digest, (), "") for n in range(1, 4)]
    slots = []
    for setup in setups:
        d.link_setup(course.id, setup.id)
        slots += p.scheduler.generate_slots(
            setup.id, MONDAY + timedelta(hours=1), MONDAY + timedelta(days=7, hours=1), 60
        )
    assert len(slots) == 3 * 24 * 7

    rng = random.Random(42)
    active = []
    booked = cancelled = refused = 0
    for _ in range(500):
        if active and rng.random() < 0.35:
            bid = active.pop(rng.randrange(len(active)))
            p.scheduler.cancel_booking(bid, teacher.id, MONDAY)
            cancelled += 1
        else:
            try:
                b = p.scheduler.book_slot(
                    rng.choice(groups).id, rng.choice(slots).id, MONDAY
                )
                active.append(b.id)
                booked += 1
            except (SlotTaken, QuotaExceeded):
                refused += 1
    assert booked > 50 and cancelled > 20  # the storm actually exercised both paths

    log = str(p.store.events_path)
    rec = recount_bookings(log)
    assert all(n <= 1 for n in rec["per_slot"].values()), "slot double-booked"
    assert all(n <= 2 for n in rec["per_group_week"].values()), "group over weekly quota"
    assert rec["linkage_ok"] and all(rec["linkage_ok"].values()), "unlinked booking"
    assert rec["active_count"] == len(active)
    # and the invariants held at every intermediate commit, not just the end
    assert booking_history_violations(log, quota=2) == []
    finish("scenario replay booking invariants", t0, 10.0)


def test_single_slot_booking_race(tmp_path):
    """50 simultaneous attempts on one slot: exactly one wins, the other 49
    get SlotTaken.  Repeated for 100 rounds."""
    t0 = time.monotonic()
    store = EventStore(tmp_path / "race", fsync=False)
    d = Directory(store)
    teacher = d.create_user("prof", Role.TEACHER, "pw")
    students = [d.create_user(f"r{i:03d}", Role.STUDENT, f"pw{i:03d}") for i in range(100)]
    course = d.create_course(teacher.id, "Race")
    for s in students:
        d.enroll_student(course.id, s.id)
    groups = [
        d.create_group(course.id, [students[2 * i].id, students[2 * i + 1].id])
        for i in range(50)
    ]
    image = register_image(store, "base", b"race-image" * 16)
    setup = d.register_lab_setup("bench", image.digest)
    d.link_setup(course.id, setup.id)
    sched = Scheduler(store, QuotaPolicy(max_slots_per_group_per_week=None))
    slots = sched.generate_slots(
        setup.id, MONDAY + timedelta(hours=1), MONDAY + timedelta(hours=101), 60
    )
    assert len(slots) == 100

    pool = ThreadPoolExecutor(max_workers=50)
    try:
        for round_no in range(100):
            slot = slots[round_no]
            barrier = threading.Barrier(50)

            def attempt(group):
                barrier.wait()
                try:
                    sched.book_slot(group.id, slot.id, MONDAY)
                    return "won"
                except SlotTaken:
                    return "taken"

            outcomes = list(pool.map(attempt, groups))
            assert outcomes.count("won") == 1, f"round {round_no}: {outcomes.count('won')} wins"
            assert outcomes.count("taken") == 49
    finally:
        pool.shutdown()

    rec = recount_bookings(str(store.events_path))
    assert all(n == 1 for n in rec["per_slot"].values())
    assert rec["active_count"] == 100
    store.close()
    finish("single slot booking race x100", t0, 10.0)


def test_session_reset_and_sweep_reclaim(world):
    """Ending a session restores the VM disk to the base image, balances
    conference rooms, and invalidates every participant token; a session
    nobody ended is reclaimed by the sweep 5 minutes after its slot."""
    t0 = time.monotonic()
    p = world.platform
    clock = p.clock
    base_digest = hashlib.sha256(b"base-image-bytes" * 32).hexdigest()

    booking = p.scheduler.book_slot(world.groups[0].id, world.slots[0].id, clock.now())
    clock.advance(hours=1)
    session = p.broker.start_session(booking.id, world.students[0].id, clock.now())
    tokens = [
        p.broker.join_session(session.id, world.students[i].id, clock.now()).token
        for i in (0, 1)
    ]
    vm_id = p.store.view(lambda st: st.sessions[session.id].vm_id)
    p.hypervisor.mutate_disk(vm_id, b"leftover experiment state")
    assert p.hypervisor.disk_digest(vm_id) != base_digest

    p.broker.end_session(session.id, world.students[0].id, clock.now())
    assert p.hypervisor.disk_digest(vm_id) == base_digest
    for token in tokens:
        with pytest.raises(TokenInvalid):
            p.broker.validate_token(token, clock.now())

    # second session is abandoned; the sweep must pick it up at end + grace
    booking2 = p.scheduler.book_slot(world.groups[0].id, world.slots[1].id, clock.now())
    clock.advance(hours=1)
    session2 = p.broker.start_session(booking2.id, world.students[0].id, clock.now())
    vm2 = p.store.view(lambda st: st.sessions[session2.id].vm_id)
    p.hypervisor.mutate_disk(vm2, b"abandoned")
    slot_end = world.slots[1].end

    clock.advance(minutes=64, seconds=59)  # 4:59 past slot end
    assert clock.now() == slot_end + timedelta(minutes=4, seconds=59)
    p.sweep()
    assert p.store.view(lambda st: st.sessions[session2.id].state) == SessionState.ACTIVE

    clock.advance(seconds=1)
    p.sweep()
    assert p.store.view(lambda st: st.sessions[session2.id].state) == SessionState.ENDED
    assert p.hypervisor.disk_digest(vm2) == base_digest
    assert p.pool.get(vm2).state == VmState.AVAILABLE

    created = p.call_log.count("create_room")
    assert created == 2 and p.call_log.count("destroy_room") == created
    assert p.rooms.live_rooms() == 0
    finish("session reset and sweep reclaim", t0, 5.0)


def drain_until(channel, final_id, throttle=0.0):
    """Collect frame ids off a client channel until the final frame shows."""
    ids = []
    deadline = time.monotonic() + 15.0
    while time.monotonic() < deadline:
        data = channel.next_outbound(timeout=0.2)
        if data is None:
            if channel.closed:
                break
            continue
        msg = decode_message(data)
        if msg.opcode != Opcode.FRAME:
            continue
        ids.append(decode_frame(msg.payload).frame_id)
        if ids[-1] == final_id:
            break
        if throttle:
            time.sleep(throttle)
    return ids


def strictly_increasing(seq):
    return all(a < b for a, b in zip(seq, seq[1:]))


def test_relay_frame_order_and_input_merge():
    """Three viewers on one desktop: 100 frames fan out while two viewers
    push 100 inputs each.  Every viewer sees strictly increasing frame ids
    ending at the final frame; the desktop receives a gap-free merged input
    stream that preserves each viewer's FIFO order.  A throttled viewer
    still gets a strictly increasing tail ending at the final frame."""
    t0 = time.monotonic()
    desktop = SimDesktopServer(width=32, height=16)
    endpoint = desktop.start()
    hub = RelayHub(connect_timeout=5.0)
    try:
        hub.open_upstream("acc-relay", endpoint)
        deadline = time.monotonic() + 5.0
        while not desktop.connected() and time.monotonic() < deadline:
            time.sleep(0.005)
        relay = hub.relay_for("acc-relay")
        channels = [relay.attach() for _ in range(3)]

        received = [[] for _ in channels]
        drainers = [
            threading.Thread(target=lambda i=i, ch=ch: received[i].extend(drain_until(ch, 100)))
            for i, ch in enumerate(channels)
        ]
        for th in drainers:
            th.start()

        def push_inputs(channel):
            for seq in range(1, 101):
                relay.submit_input(channel, InputEvent(InputKind.KEY_DOWN, seq, code=30))

        pushers = [
            threading.Thread(target=push_inputs, args=(ch,)) for ch in channels[:2]
        ]
        for th in pushers:
            th.start()
        assert desktop.send_frames(100) == 100
        for th in pushers + drainers:
            th.join(timeout=15.0)
            assert not th.is_alive()

        for ids in received:
            assert ids, "viewer saw no frames"
            assert strictly_increasing(ids)
            assert ids[-1] == 100
        deadline = time.monotonic() + 5.0
        while len(desktop.received_inputs()) < 200 and time.monotonic() < deadline:
            time.sleep(0.005)
        records = [
            (m.relay_seq, m.client_tag, m.event.client_seq)
            for m in desktop.received_inputs()
        ]
        assert len(records) == 200
        assert check_merge_order(records) == []
    finally:
        hub.shutdown()
        desktop.stop()

    # throttled viewer variant on a fresh desktop
    desktop2 = SimDesktopServer(width=32, height=16)
    endpoint2 = desktop2.start()
    hub2 = RelayHub(connect_timeout=5.0)
    try:
        hub2.open_upstream("acc-slow", endpoint2)
        deadline = time.monotonic() + 5.0
        while not desktop2.connected() and time.monotonic() < deadline:
            time.sleep(0.005)
        relay2 = hub2.relay_for("acc-slow")
        fast, slow = relay2.attach(), relay2.attach()
        got_fast, got_slow = [], []
        fast_th = threading.Thread(target=lambda: got_fast.extend(drain_until(fast, 60)))
        slow_th = threading.Thread(
            target=lambda: got_slow.extend(drain_until(slow, 60, throttle=0.01))
        )
        fast_th.start()
        slow_th.start()
        assert desktop2.send_frames(60) == 60
        for th in (fast_th, slow_th):
            th.join(timeout=15.0)
            assert not th.is_alive()
        for ids in (got_fast, got_slow):
            assert strictly_increasing(ids)
            assert ids[-1] == 60
        assert len(got_slow) <= len(got_fast)
    finally:
        hub2.shutdown()
        desktop2.stop()
    finish("relay frame order and input merge", t0, 10.0)


def test_chat_outlives_sessions_and_restart(make_platform):
    """Messages posted during one session stay readable after it ends,
    during the next session, and after a full process restart."""
    t0 = time.monotonic()
    p1 = make_platform("accept-chat")
    w = build_world(p1)
    clock = p1.clock
    gid = w.groups[0].id
    alice, bob = w.students[0], w.students[1]

    b1 = p1.scheduler.book_slot(gid, w.slots[0].id, clock.now())
    clock.advance(hours=1)
    s1 = p1.broker.start_session(b1.id, alice.id, clock.now())
    for i in range(3):
        p1.chat.post_message(gid, alice.id, f"during session one #{i}", clock.now())
    p1.broker.end_session(s1.id, alice.id, clock.now())

    # readable between sessions
    assert len(p1.chat.history(gid, bob.id)) == 3

    b2 = p1.scheduler.book_slot(gid, w.slots[1].id, clock.now())
    clock.advance(hours=1)
    s2 = p1.broker.start_session(b2.id, bob.id, clock.now())
    in_session_two = p1.chat.history(gid, bob.id)
    assert [m.body for m in in_session_two][:3] == [
        "during session one #0",
        "during session one #1",
        "during session one #2",
    ]
    p1.chat.post_message(gid, bob.id, "during session two", clock.now())
    p1.broker.end_session(s2.id, bob.id, clock.now())
    before = [(m.seq, m.author, m.body) for m in p1.chat.history(gid, bob.id)]
    p1.close()

    p2 = make_platform("accept-chat")
    after = [(m.seq, m.author, m.body) for m in p2.chat.history(gid, bob.id)]
    assert after == before and len(after) == 4
    finish("chat outlives sessions and restart", t0, 5.0)


def test_crash_consistency_under_kill(tmp_path):
    """SIGKILL a writer mid-storm, 20 times: the log must always replay to
    exactly the committed prefix with gap-free sequence numbers, and every
    write the child saw acknowledged must have survived."""
    t0 = time.monotonic()
    child = Path(__file__).with_name("crash_child.py")
    rng = random.Random(1234)
    for rep in range(20):
        data_dir = tmp_path / f"crash{rep}"
        proc = subprocess.Popen(
            [sys.executable, str(child), str(data_dir), "1000", "1"],
            stdout=subprocess.PIPE,
        )
        acked = 0
        kill_after = rng.randrange(5, 120)
        for _ in range(kill_after):
            line = proc.stdout.readline().strip()
            if not line or line == b"DONE":
                break
            acked = int(line)
        os.kill(proc.pid, signal.SIGKILL)
        proc.wait()
        proc.stdout.close()

        # independent raw scan: parse whole lines, stop at the first torn one
        committed = []
        with open(data_dir / "events.log", "rb") as fh:
            for raw in fh:
                try:
                    committed.append(json.loads(raw))
                except ValueError:
                    break
        assert [ev["seq"] for ev in committed] == list(range(1, len(committed) + 1))
        assert len(committed) >= acked, f"rep {rep}: acked {acked} but log has {len(committed)}"

        # the production replay must land on exactly that prefix
        events, _ = read_log(data_dir / "events.log")
        assert [e.seq for e in events] == [ev["seq"] for ev in committed]
        replayed = State()
        for ev in committed:
            replayed.apply(ev["kind"], ev["payload"])
        store = EventStore(data_dir, fsync=False)
        assert store.last_seq == len(committed)
        assert store.canonical_state() == replayed.canonical()
        # and the store keeps working after the crash
        store.commit("image.registered", {"digest": f"post-crash-{rep}", "label": "x", "content_b64": ""})
        assert scan_log_seqs(str(store.events_path))[-1] == len(committed) + 1
        store.close()
    finish("crash consistency x20", t0, 30.0)


ACTION_REQUESTS = {
    "users.create": ("post", "/api/users",
                     {"display_name": "new", "role": "student", "secret": "pw"}),
    "images.register": ("post", "/api/images", {"label": "img", "content_b64": "aGk="}),
    "setups.register": ("post", "/api/setups", {"name": "bench-x", "base_image": "d"}),
    "courses.create": ("post", "/api/courses", {"title": "Extra"}),
    "courses.enroll": ("post", "/api/courses/{course}/students", {"student_id": "u"}),
    "courses.link_setup": ("post", "/api/courses/{course}/setups", {"setup_id": "s"}),
    "groups.create": ("post", "/api/groups", {"course_id": "{course}", "member_ids": []}),
    "slots.generate": ("post", "/api/setups/{setup}/slots",
                       {"window_start": "2026-09-07T08:00:00Z",
                        "window_end": "2026-09-07T10:00:00Z", "slot_minutes": 60}),
    "bookings.create": ("post", "/api/bookings", {"group_id": "{group}", "slot_id": "{slot}"}),
    "bookings.cancel": ("delete", "/api/bookings/{booking}", None),
    "sessions.start": ("post", "/api/sessions", {"booking_id": "{booking}"}),
    "sessions.join": ("post", "/api/sessions/none/join", None),
    "sessions.end": ("delete", "/api/sessions/none", None),
    "chat.post": ("post", "/api/groups/{group}/chat", {"body": "hi"}),
    "channels.write": ("post", "/api/channels/dac/write",
                       {"participant_token": "x", "value": 1.0}),
}


def test_authorization_matrix_denies_cleanly(world):
    """Every mutating endpoint, tried under every role the matrix does not
    allow, answers PermissionDenied and commits nothing; resource-scoped
    denials (foreign group, foreign course) behave the same way."""
    t0 = time.monotonic()
    p = world.platform
    app = create_app(p)
    with TestClient(app) as client:
        tokens = {}
        for role, name, secret in (
            (Role.ADMINISTRATOR, "admin", "pw-admin"),
            (Role.TEACHER, "teacher", "pw-teacher"),
            (Role.STUDENT, "s00", "pw-s00"),
        ):
            resp = client.post(
                "/api/auth/login", json={"display_name": name, "secret": secret}
            )
            tokens[role] = resp.json()["token"]

        # a booking owned by group 1 so resource denials have a target
        foreign_booking = p.scheduler.book_slot(
            world.groups[1].id, world.slots[0].id, p.now()
        )
        subst = {
            "course": world.course.id,
            "setup": world.setup.id,
            "group": world.groups[1].id,
            "slot": world.slots[1].id,
            "booking": foreign_booking.id,
        }

        def fill(value):
            if isinstance(value, str) and value.startswith("{") and value.endswith("}"):
                return subst[value[1:-1]]
            if isinstance(value, dict):
                return {k: fill(v) for k, v in value.items()}
            return value

        def fire(method, path, body, token):
            path = path.format(**subst)
            if body is not None:
                body = fill(body)
            headers = {"Authorization": f"Bearer {token}"}
            if method == "delete":
                return client.delete(path, headers=headers)
            return client.post(path, json=body, headers=headers)

        assert set(ACTION_REQUESTS) == set(MUTATING_ACTIONS)
        denied = 0
        for action in MUTATING_ACTIONS:
            method, path, body = ACTION_REQUESTS[action]
            for role in (Role.ADMINISTRATOR, Role.TEACHER, Role.STUDENT):
                if role in PERMISSIONS[action]:
                    continue
                before = p.store.last_seq
                resp = fire(method, path, body, tokens[role])
                assert resp.status_code == 403, (action, role, resp.text)
                assert resp.json()["error"]["code"] == "PermissionDenied", (action, role)
                assert p.store.last_seq == before, f"{action} committed under {role}"
                denied += 1
        expected = sum(
            3 - len(PERMISSIONS[a] & {Role.ADMINISTRATOR, Role.TEACHER, Role.STUDENT})
            for a in MUTATING_ACTIONS
        )
        assert denied == expected and denied >= 10

        # resource-rule denials: s00 is not in group 1
        for action in ("bookings.create", "chat.post", "bookings.cancel"):
            method, path, body = ACTION_REQUESTS[action]
            before = p.store.last_seq
            resp = fire(method, path, body, tokens[Role.STUDENT])
            assert resp.status_code == 403, (action, resp.text)
            assert resp.json()["error"]["code"] == "PermissionDenied"
            assert p.store.last_seq == before
    finish("authorization matrix denies cleanly", t0, 5.0)
