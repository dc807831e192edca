"""Wires the whole lab together and owns its background upkeep.

One LabPlatform per data directory: it builds the event store on disk,
connects the simulated hypervisor, conference, camera, and hardware drivers,
and exposes the services the gateway routes requests to.  A config file can
override quotas, pool sizes, grace windows, and desktop geometry; everything
has a sensible default so `LabPlatform(data_dir)` just works.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from typing import Dict, List, Optional

from .auth import AuthService
from .booking import QuotaPolicy, Scheduler
from .collab import ChatService, HardwareService, RoomManager
from .domain import Directory, GroupBounds
from .errors import RemoteLabError
from .events import EventBus
from .model import (
    ChannelDatatype,
    ChannelDescriptor,
    ChannelKind,
    Role,
    SessionState,
)
from .persistence import EventStore
from .relay import RelayHub
from .sessions import SessionBroker, SessionGraces
from .simdrivers import (
    CallLog,
    FaultPlan,
    SimCamera,
    SimConference,
    SimDesktopServer,
    SimHardware,
    SimHypervisor,
)
from .util import Clock, SystemClock, ensure_utc
from .vmpool import VmHandle, VmPool, register_image

logger = logging.getLogger(__name__)


@dataclass
class PlatformConfig:
    data_dir: str = "./data"
    bind_host: str = "127.0.0.1"
    port: int = 8000
    drivers: str = "sim"
    fsync: bool = True
    quota_per_week: Optional[int] = 2
    quota_per_setup: Dict[str, Optional[int]] = field(default_factory=dict)
    pool_capacity: int = 1
    pool_capacity_per_setup: Dict[str, int] = field(default_factory=dict)
    group_min: int = 2
    group_max: int = 5
    token_lifetime_hours: float = 12.0
    early_start_min: int = 5
    end_grace_min: int = 5
    token_extra_min: int = 5
    desktop_width: int = 320
    desktop_height: int = 240
    desktop_fps: float = 10.0
    camera_width: int = 160
    camera_height: int = 120
    sweep_interval_s: float = 30.0
    hardware_seed: int = 0

    @staticmethod
    def load(path: Optional[str]) -> "PlatformConfig":
        cfg = PlatformConfig()
        if path is None:
            return cfg
        raw = json.loads(Path(path).read_text())
        for key, value in raw.items():
            if not hasattr(cfg, key):
                raise ValueError(f"unknown config key: {key}")
            setattr(cfg, key, value)
        return cfg


class LabPlatform:
    """Composition root; everything the gateway needs hangs off this."""

    def __init__(
        self,
        data_dir: str,
        config: Optional[PlatformConfig] = None,
        clock: Optional[Clock] = None,
        fault_plan: Optional[FaultPlan] = None,
    ):
        cfg = config or PlatformConfig()
        cfg.data_dir = str(data_dir)
        if cfg.drivers != "sim":
            raise ValueError(f"unknown driver set {cfg.drivers!r}; only 'sim' is built in")
        self.config = cfg
        self.clock = clock or SystemClock()
        self.faults = fault_plan or FaultPlan()
        self.call_log = CallLog()

        self.store = EventStore(cfg.data_dir, fsync=cfg.fsync)
        self.bus = EventBus()
        self.auth = AuthService(self.store, self.clock, lifetime_hours=cfg.token_lifetime_hours)
        self.directory = Directory(
            self.store, GroupBounds(min_size=cfg.group_min, max_size=cfg.group_max)
        )
        self.scheduler = Scheduler(
            self.store,
            QuotaPolicy(
                max_slots_per_group_per_week=cfg.quota_per_week,
                per_setup=dict(cfg.quota_per_setup),
            ),
        )

        self.hypervisor = SimHypervisor(
            fault_plan=self.faults,
            log=self.call_log,
            desktop_factory=self._make_desktop,
        )
        self.pool = VmPool(self.store, self.hypervisor, self._pool_capacity)
        self.conference = SimConference(fault_plan=self.faults, log=self.call_log)
        self.rooms = RoomManager(self.conference)
        self.camera = SimCamera(cfg.camera_width, cfg.camera_height, clock=self.clock)
        self.hardware_sim = SimHardware(
            seed=cfg.hardware_seed,
            clock=self.clock,
            fault_plan=self.faults,
            log=self.call_log,
        )

        self.relay = RelayHub(notify_failure=self._upstream_failed)
        self.broker = SessionBroker(
            self.store,
            self.pool,
            self.rooms,
            self.bus,
            SessionGraces(cfg.early_start_min, cfg.end_grace_min, cfg.token_extra_min),
        )
        self.broker.relay = self.relay

        self.chat = ChatService(self.store, self.bus)
        self.hardware = HardwareService(
            self.store,
            self.bus,
            driver_for=self._hardware_driver_for,
            token_resolver=lambda token: self.broker.resolve_token_setup(token, self.now()),
        )

        self._register_known_channels()
        self._ticker: Optional[threading.Thread] = None
        self._ticker_stop = threading.Event()

    # -- small factories --------------------------------------------------

    def now(self) -> datetime:
        return ensure_utc(self.clock.now())

    def _make_desktop(self, vm_id: str) -> SimDesktopServer:
        cfg = self.config
        return SimDesktopServer(cfg.desktop_width, cfg.desktop_height, fps=cfg.desktop_fps)

    def _pool_capacity(self, setup_id: str) -> int:
        return self.config.pool_capacity_per_setup.get(setup_id, self.config.pool_capacity)

    def _hardware_driver_for(self, setup_id: str):
        return self.hardware_sim

    def _upstream_failed(self, session_id: str, reason: str) -> None:
        self.broker.notify_upstream_failure(session_id, reason)

    def _register_known_channels(self) -> None:
        for setup in self.store.view(lambda st: list(st.setups.values())):
            for ch in setup.channels:
                self.hardware_sim.register(ch)

    # -- operations the gateway calls beyond the plain services ------------

    def register_setup(self, name: str, base_image: str, channels=(), camera_source: str = ""):
        setup = self.directory.register_lab_setup(name, base_image, channels, camera_source)
        for ch in setup.channels:
            self.hardware_sim.register(ch)
        return setup

    def register_image(self, label: str, content: bytes):
        return register_image(self.store, label, content)

    def desktop_for_session(self, session_id: str) -> Optional[SimDesktopServer]:
        session = self.store.view(lambda st: st.sessions.get(session_id))
        if session is None or not session.vm_id:
            return None
        return self.hypervisor.desktops.get(session.vm_id)

    # -- upkeep -----------------------------------------------------------

    def sweep(self, now: Optional[datetime] = None) -> dict:
        now = ensure_utc(now) if now else self.now()
        ended = self.broker.sweep(now)
        vm_outcomes = self.pool.scheduled_sweep(now, self._vm_is_stale)
        return {"sessions_ended": ended, "vms": vm_outcomes}

    def _vm_is_stale(self, handle: VmHandle) -> bool:
        if handle.session_id is None:
            return True  # acquired but never bound: a start that died halfway
        session = self.store.view(lambda st: st.sessions.get(handle.session_id))
        return session is None or session.state == SessionState.ENDED

    def recover_orphans(self) -> List[str]:
        """Close out sessions a previous process left running."""
        return self.broker.recover_orphans(self.now())

    def start_background(self) -> None:
        if self._ticker is not None:
            return
        self._ticker_stop.clear()

        def tick():
            while not self._ticker_stop.wait(self.config.sweep_interval_s):
                try:
                    self.sweep()
                except RemoteLabError as exc:
                    logger.warning("background sweep failed: %s", exc)

        self._ticker = threading.Thread(target=tick, name="platform-sweep", daemon=True)
        self._ticker.start()

    def close(self) -> None:
        self._ticker_stop.set()
        if self._ticker is not None:
            self._ticker.join(timeout=2.0)
            self._ticker = None
        self.relay.shutdown()
        self.hypervisor.shutdown()
        self.bus.close_all()
        self.store.close()

    # -- demo data -----------------------------------------------------------

    def seed_demo(self) -> dict:
        """Create a ready-to-use cohort: one course, 42 students in 20
        groups of two to five, three bench setups, and a week of hourly
        slots per bench.  Idempotent-ish: refuses to run twice."""
        if self.store.view(lambda st: bool(st.users)):
            raise RemoteLabError("data directory already seeded")
        d = self.directory
        admin = d.create_user("admin", Role.ADMINISTRATOR, "admin")
        teacher = d.create_user("teacher", Role.TEACHER, "teacher")
        students = [
            d.create_user(f"student{i:02d}", Role.STUDENT, f"student{i:02d}")
            for i in range(1, 43)
        ]
        course = d.create_course(teacher.id, "Digital Design Lab")
        for s in students:
            d.enroll_student(course.id, s.id)

        sizes = [3, 3] + [2] * 18  # 20 groups covering all 42 students
        groups = []
        cursor = 0
        for size in sizes:
            member_ids = [s.id for s in students[cursor : cursor + size]]
            cursor += size
            groups.append(d.create_group(course.id, member_ids))

        image = self.register_image("zybo-base", b"zybo-base-image-v1" * 64)
        setups = []
        for n in (1, 2, 3):
            channels = (
                ChannelDescriptor(f"bench{n}.temp", ChannelKind.SENSOR, ChannelDatatype.FLOAT, "C", (15.0, 45.0)),
                ChannelDescriptor(f"bench{n}.vin", ChannelKind.SENSOR, ChannelDatatype.FLOAT, "V", (0.0, 3.3)),
                ChannelDescriptor(f"bench{n}.led", ChannelKind.ACTUATOR, ChannelDatatype.BOOL),
                ChannelDescriptor(f"bench{n}.dac", ChannelKind.ACTUATOR, ChannelDatatype.FLOAT, "V", (0.0, 3.3)),
            )
            setup = self.register_setup(
                f"fpga-bench-{n}", image.digest, channels, camera_source=f"cam-{n}"
            )
            d.link_setup(course.id, setup.id)
            setups.append(setup)

        now = self.now()
        window_start = now.replace(minute=0, second=0, microsecond=0) + timedelta(hours=1)
        slots = []
        for setup in setups:
            slots += self.scheduler.generate_slots(
                setup.id, window_start, window_start + timedelta(days=7), 60
            )
        return {
            "admin": admin.id,
            "teacher": teacher.id,
            "students": [s.id for s in students],
            "course": course.id,
            "groups": [g.id for g in groups],
            "image": image.digest,
            "setups": [s.id for s in setups],
            "slots": len(slots),
        }
