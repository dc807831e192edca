"""VM pool per lab setup: acquisition, immutable-image reset, sweep.

The pool talks to a hypervisor through the ``HypervisorDriver`` interface
(the integration seam for real hypervisors; tests and the default runtime
use the simulated driver).  Every VM handed out is freshly provisioned from
the setup's base image or has been restored to it, so its disk digest equals
the base digest.

State machine (enforced, every transition recorded):

    provision -> Available -> Assigned -> Resetting -> Available
                                              |            ^
                                              v            |
                                            Failed --------+   (retry)
"""

from __future__ import annotations

import base64
import hashlib
import logging
import threading
from dataclasses import dataclass
from datetime import datetime, timedelta
from enum import Enum
from typing import Callable, Dict, List, Optional, Protocol, Tuple

from .errors import DriverFailure, InvalidState, NotFound, PoolExhausted, UnknownImage
from .model import DiskImage
from .persistence import EventStore
from .util import new_id

logger = logging.getLogger(__name__)


def register_image(store: EventStore, label: str, content: bytes) -> DiskImage:
    """Store a base disk image keyed by the sha256 of its content."""
    digest = hashlib.sha256(content).hexdigest()

    def txn(tx):
        if digest not in tx.state.images:
            tx.commit(
                "image.registered",
                {
                    "digest": digest,
                    "label": label,
                    "content_b64": base64.b64encode(content).decode("ascii"),
                },
            )
        return tx.state.images[digest]

    return store.transact(txn)


class VmState(str, Enum):
    AVAILABLE = "available"
    ASSIGNED = "assigned"
    RESETTING = "resetting"
    FAILED = "failed"


_LEGAL = {
    (VmState.AVAILABLE, VmState.ASSIGNED),
    (VmState.ASSIGNED, VmState.RESETTING),
    (VmState.RESETTING, VmState.AVAILABLE),
    (VmState.RESETTING, VmState.FAILED),
    (VmState.FAILED, VmState.RESETTING),
}


@dataclass(frozen=True)
class VmProbe:
    running: bool
    digest: str


class HypervisorDriver(Protocol):
    def provision(self, vm_id: str, setup_id: str, base_digest: str, content: bytes) -> str:
        """Create a VM from the base image; returns its desktop endpoint."""

    def start(self, vm_id: str) -> None: ...

    def stop(self, vm_id: str) -> None: ...

    def restore_to_base(self, vm_id: str) -> str:
        """Rewrite the disk to the base image; returns the resulting digest.

        Idempotent: repeating after success leaves the digest unchanged.
        """

    def probe(self, vm_id: str) -> VmProbe: ...


@dataclass(frozen=True)
class VmHandle:
    """Immutable view of a pool VM."""

    id: str
    setup_id: str
    base_digest: str
    state: VmState
    endpoint: str
    dirty: bool
    session_id: Optional[str]


class _VmRecord:
    __slots__ = ("id", "setup_id", "base_digest", "state", "endpoint", "dirty", "session_id")

    def __init__(self, vm_id: str, setup_id: str, base_digest: str, endpoint: str):
        self.id = vm_id
        self.setup_id = setup_id
        self.base_digest = base_digest
        self.state = VmState.AVAILABLE
        self.endpoint = endpoint
        self.dirty = False
        self.session_id: Optional[str] = None

    def handle(self) -> VmHandle:
        return VmHandle(
            self.id, self.setup_id, self.base_digest, self.state,
            self.endpoint, self.dirty, self.session_id,
        )


class VmPool:
    def __init__(
        self,
        store: EventStore,
        driver: HypervisorDriver,
        capacity: Callable[[str], int],
    ):
        self._store = store
        self._driver = driver
        self._capacity = capacity
        self._lock = threading.RLock()
        self._vms: Dict[str, _VmRecord] = {}
        self._by_setup: Dict[str, List[str]] = {}
        self.transitions: List[Tuple[str, Optional[VmState], VmState]] = []

    # -- state machine helpers ------------------------------------------------

    def _transition(self, rec: _VmRecord, to: VmState) -> None:
        if (rec.state, to) not in _LEGAL:
            raise InvalidState(f"vm {rec.id}: illegal transition {rec.state.value} -> {to.value}")
        self.transitions.append((rec.id, rec.state, to))
        rec.state = to

    def _record_new(self, rec: _VmRecord) -> None:
        self._vms[rec.id] = rec
        self._by_setup.setdefault(rec.setup_id, []).append(rec.id)
        self.transitions.append((rec.id, None, VmState.AVAILABLE))

    # -- operations ------------------------------------------------------------

    def acquire(self, setup_id: str) -> VmHandle:
        with self._lock:
            setup = self._store.view(lambda st: st.setups.get(setup_id))
            if setup is None:
                raise NotFound(f"no setup {setup_id}")
            if not setup.enabled:
                raise InvalidState(f"setup {setup_id} is disabled")
            for vm_id in self._by_setup.get(setup_id, []):
                rec = self._vms[vm_id]
                if rec.state == VmState.AVAILABLE:
                    self._transition(rec, VmState.ASSIGNED)
                    rec.dirty = True
                    return rec.handle()
            if len(self._by_setup.get(setup_id, [])) >= self._capacity(setup_id):
                raise PoolExhausted(f"no available VM for setup {setup_id}")
            rec = self._provision(setup_id, setup.base_image)
            self._transition(rec, VmState.ASSIGNED)
            rec.dirty = True
            return rec.handle()

    def _provision(self, setup_id: str, base_digest: str) -> _VmRecord:
        image = self._store.view(lambda st: st.images.get(base_digest))
        if image is None:
            raise UnknownImage(f"image {base_digest} not registered")
        content = base64.b64decode(image.content_b64)
        vm_id = new_id("vm")
        try:
            endpoint = self._driver.provision(vm_id, setup_id, base_digest, content)
            self._driver.start(vm_id)
        except DriverFailure:
            raise
        except Exception as exc:
            raise DriverFailure(f"provision failed: {exc}")
        rec = _VmRecord(vm_id, setup_id, base_digest, endpoint)
        self._record_new(rec)
        return rec

    def bind_session(self, vm_id: str, session_id: str) -> None:
        with self._lock:
            rec = self._require(vm_id)
            if rec.state != VmState.ASSIGNED:
                raise InvalidState(f"vm {vm_id} not assigned")
            rec.session_id = session_id

    def release_and_reset(self, vm_id: str) -> VmHandle:
        with self._lock:
            rec = self._require(vm_id)
            if rec.state not in (VmState.ASSIGNED, VmState.FAILED):
                raise InvalidState(f"vm {vm_id} is {rec.state.value}, not releasable")
            self._transition(rec, VmState.RESETTING)
            rec.session_id = None
        # driver work happens outside the pool lock; it may be slow or fail
        try:
            self._driver.stop(vm_id)
            digest = self._driver.restore_to_base(vm_id)
            self._driver.start(vm_id)
        except Exception as exc:
            with self._lock:
                self._transition(rec, VmState.FAILED)
            logger.warning("vm %s reset failed: %s", vm_id, exc)
            raise DriverFailure(f"reset of {vm_id} failed: {exc}")
        with self._lock:
            if digest != rec.base_digest:
                self._transition(rec, VmState.FAILED)
                raise DriverFailure(
                    f"reset of {vm_id} produced digest {digest[:12]}.., expected base"
                )
            rec.dirty = False
            self._transition(rec, VmState.AVAILABLE)
            return rec.handle()

    def scheduled_sweep(
        self, now: datetime, is_stale: Callable[[VmHandle], bool]
    ) -> List[Tuple[str, str]]:
        """Force-release stale Assigned VMs and retry Failed ones.

        Per-VM failures are recorded and the sweep continues.  Racing
        explicit releases win: a VM already Resetting is skipped.
        """
        with self._lock:
            candidates = [
                rec.id
                for rec in self._vms.values()
                if rec.state == VmState.FAILED
                or (rec.state == VmState.ASSIGNED and is_stale(rec.handle()))
            ]
        outcomes: List[Tuple[str, str]] = []
        for vm_id in candidates:
            try:
                self.release_and_reset(vm_id)
                outcomes.append((vm_id, "reset"))
            except InvalidState:
                continue  # someone else transitioned it first
            except DriverFailure:
                outcomes.append((vm_id, "failed"))
        return outcomes

    def pool_status(self, setup_id: str) -> Dict[str, int]:
        with self._lock:
            if not self._store.view(lambda st: setup_id in st.setups):
                raise NotFound(f"no setup {setup_id}")
            counts: Dict[str, int] = {}
            for vm_id in self._by_setup.get(setup_id, []):
                state = self._vms[vm_id].state.value
                counts[state] = counts.get(state, 0) + 1
            return counts

    def get(self, vm_id: str) -> VmHandle:
        with self._lock:
            return self._require(vm_id).handle()

    def _require(self, vm_id: str) -> _VmRecord:
        rec = self._vms.get(vm_id)
        if rec is None:
            raise NotFound(f"no vm {vm_id}")
        return rec

    def all_handles(self) -> List[VmHandle]:
        with self._lock:
            return [rec.handle() for rec in self._vms.values()]
