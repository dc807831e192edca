import sys
from datetime import timedelta
from pathlib import Path
from types import SimpleNamespace

import pytest

sys.path.insert(0, str(Path(__file__).parent))  # for the oracles helper module

from remotelab.model import ChannelDatatype, ChannelDescriptor, ChannelKind, Role
from remotelab.persistence import EventStore
from remotelab.platform import LabPlatform, PlatformConfig
from remotelab.util import ManualClock, parse_utc

MONDAY = parse_utc("2026-08-10T08:00:00Z")  # a Monday, ISO week 2026-W33


@pytest.fixture
def clock():
    return ManualClock(MONDAY)


@pytest.fixture
def store(tmp_path):
    s = EventStore(tmp_path / "data", fsync=False)
    yield s
    s.close()


@pytest.fixture
def make_platform(tmp_path, clock):
    """Factory for LabPlatform instances sharing the manual clock.

    Reopening with the same name reuses the data directory, which is how
    restart/replay tests simulate a new process.
    """
    opened = []

    def build(name="main", **overrides) -> LabPlatform:
        defaults = dict(fsync=False, desktop_fps=0.0, sweep_interval_s=3600.0)
        defaults.update(overrides)
        p = LabPlatform(tmp_path / name, config=PlatformConfig(**defaults), clock=clock)
        opened.append(p)
        return p

    yield build
    for p in opened:
        p.close()


def build_world(platform, students=4, group_sizes=(2, 2), slot_hours=8):
    """Minimal populated lab: course, groups, one setup, a day of slots."""
    d = platform.directory
    admin = d.create_user("admin", Role.ADMINISTRATOR, "pw-admin")
    teacher = d.create_user("teacher", Role.TEACHER, "pw-teacher")
    studs = [d.create_user(f"s{i:02d}", Role.STUDENT, f"pw-s{i:02d}") for i in range(students)]
    course = d.create_course(teacher.id, "Circuits")
    for s in studs:
        d.enroll_student(course.id, s.id)
    groups = []
    cursor = 0
    for size in group_sizes:
        groups.append(d.create_group(course.id, [s.id for s in studs[cursor : cursor + size]]))
        cursor += size
    image = platform.register_image("base", b"base-image-bytes" * 32)
    channels = (
        ChannelDescriptor("temp", ChannelKind.SENSOR, ChannelDatatype.FLOAT, "C", (15.0, 45.0)),
        ChannelDescriptor("led", ChannelKind.ACTUATOR, ChannelDatatype.BOOL),
        ChannelDescriptor("dac", ChannelKind.ACTUATOR, ChannelDatatype.FLOAT, "V", (0.0, 3.3)),
    )
    setup = platform.register_setup("bench", image.digest, channels, "cam-0")
    d.link_setup(course.id, setup.id)
    start = platform.now().replace(minute=0, second=0, microsecond=0) + timedelta(hours=1)
    slots = platform.scheduler.generate_slots(
        setup.id, start, start + timedelta(hours=slot_hours), 60
    )
    return SimpleNamespace(
        admin=admin,
        teacher=teacher,
        students=studs,
        course=course,
        groups=groups,
        image=image,
        setup=setup,
        slots=slots,
    )


@pytest.fixture
def world(make_platform):
    platform = make_platform()
    w = build_world(platform)
    w.platform = platform
    return w
