"""VM pool: acquisition, exhaustion, reset-to-base, failure retry, sweep."""

import hashlib
import threading

import pytest

from remotelab.domain import Directory
from remotelab.errors import DriverFailure, InvalidState, NotFound, PoolExhausted
from remotelab.persistence import EventStore
from remotelab.simdrivers import FaultPlan, SimHypervisor
from remotelab.vmpool import VmPool, VmState, register_image

BASE = b"golden-image" * 100
BASE_DIGEST = hashlib.sha256(BASE).hexdigest()


@pytest.fixture
def rig(store):
    directory = Directory(store)
    image = register_image(store, "golden", BASE)
    setup = directory.register_lab_setup("bench", image.digest)
    hv = SimHypervisor()
    pool = VmPool(store, hv, capacity=lambda sid: 2)
    return store, setup, hv, pool


class TestImages:
    def test_digest_is_sha256_of_content(self, store):
        image = register_image(store, "golden", BASE)
        assert image.digest == BASE_DIGEST

    def test_same_content_registers_once(self, store):
        a = register_image(store, "golden", BASE)
        b = register_image(store, "other-label", BASE)
        assert a.digest == b.digest
        assert store.view(lambda st: len(st.images)) == 1


class TestAcquire:
    def test_fresh_vm_starts_from_base(self, rig):
        store, setup, hv, pool = rig
        vm = pool.acquire(setup.id)
        assert vm.state == VmState.ASSIGNED
        assert vm.dirty is True
        probe = hv.probe(vm.id)
        assert probe.running and probe.digest == BASE_DIGEST

    def test_capacity_limit(self, rig):
        store, setup, hv, pool = rig
        pool.acquire(setup.id)
        pool.acquire(setup.id)
        with pytest.raises(PoolExhausted):
            pool.acquire(setup.id)

    def test_release_makes_vm_reusable(self, rig):
        store, setup, hv, pool = rig
        a = pool.acquire(setup.id)
        b = pool.acquire(setup.id)
        pool.release_and_reset(a.id)
        c = pool.acquire(setup.id)
        assert c.id == a.id  # recycled, not a third VM
        assert {h.id for h in pool.all_handles()} == {a.id, b.id}

    def test_unknown_setup(self, rig):
        _, _, _, pool = rig
        with pytest.raises(NotFound):
            pool.acquire("nope")


class TestReset:
    def test_reset_discards_session_writes(self, rig):
        store, setup, hv, pool = rig
        vm = pool.acquire(setup.id)
        hv.mutate_disk(vm.id, b"homework.bit")
        assert hv.disk_digest(vm.id) != BASE_DIGEST

        released = pool.release_and_reset(vm.id)
        assert released.state == VmState.AVAILABLE
        assert released.dirty is False
        assert hv.disk_digest(vm.id) == BASE_DIGEST

    def test_reset_is_idempotent_at_driver_level(self, rig):
        store, setup, hv, pool = rig
        vm = pool.acquire(setup.id)
        hv.mutate_disk(vm.id)
        assert hv.restore_to_base(vm.id) == BASE_DIGEST
        assert hv.restore_to_base(vm.id) == BASE_DIGEST

    def test_release_of_available_vm_rejected(self, rig):
        store, setup, hv, pool = rig
        vm = pool.acquire(setup.id)
        pool.release_and_reset(vm.id)
        with pytest.raises(InvalidState):
            pool.release_and_reset(vm.id)

    def test_bind_session_then_release_clears_binding(self, rig):
        store, setup, hv, pool = rig
        vm = pool.acquire(setup.id)
        pool.bind_session(vm.id, "sess-1")
        assert pool.get(vm.id).session_id == "sess-1"
        assert pool.release_and_reset(vm.id).session_id is None


class TestFailureAndRetry:
    def test_failed_reset_parks_vm_then_retry_recovers(self, rig):
        store, setup, hv, pool = rig
        hv.faults.fail("restore", on_call=1)
        vm = pool.acquire(setup.id)
        hv.mutate_disk(vm.id)

        with pytest.raises(DriverFailure):
            pool.release_and_reset(vm.id)
        assert pool.get(vm.id).state == VmState.FAILED

        recovered = pool.release_and_reset(vm.id)  # second restore succeeds
        assert recovered.state == VmState.AVAILABLE
        assert hv.disk_digest(vm.id) == BASE_DIGEST

    def test_failed_vm_is_not_handed_out(self, rig):
        store, setup, hv, pool = rig
        hv.faults.fail("restore", permanent=True)
        vm = pool.acquire(setup.id)
        with pytest.raises(DriverFailure):
            pool.release_and_reset(vm.id)

        other = pool.acquire(setup.id)
        assert other.id != vm.id
        with pytest.raises(PoolExhausted):  # failed VM still counts against capacity
            pool.acquire(setup.id)

    def test_transition_trail_is_legal(self, rig):
        store, setup, hv, pool = rig
        hv.faults.fail("restore", on_call=1)
        vm = pool.acquire(setup.id)
        with pytest.raises(DriverFailure):
            pool.release_and_reset(vm.id)
        pool.release_and_reset(vm.id)
        trail = [(frm, to) for vid, frm, to in pool.transitions if vid == vm.id]
        assert trail == [
            (None, VmState.AVAILABLE),
            (VmState.AVAILABLE, VmState.ASSIGNED),
            (VmState.ASSIGNED, VmState.RESETTING),
            (VmState.RESETTING, VmState.FAILED),
            (VmState.FAILED, VmState.RESETTING),
            (VmState.RESETTING, VmState.AVAILABLE),
        ]


class TestSweep:
    def test_sweep_reclaims_stale_and_retries_failed(self, rig, clock):
        store, setup, hv, pool = rig
        hv.faults.fail("restore", on_call=1)
        stale = pool.acquire(setup.id)
        with pytest.raises(DriverFailure):
            pool.release_and_reset(stale.id)  # now Failed

        fresh = pool.acquire(setup.id)
        pool.bind_session(fresh.id, "active-session")

        outcomes = dict(
            pool.scheduled_sweep(clock.now(), is_stale=lambda h: h.session_id is None)
        )
        assert outcomes == {stale.id: "reset"}
        assert pool.get(stale.id).state == VmState.AVAILABLE
        assert pool.get(fresh.id).state == VmState.ASSIGNED  # not stale, untouched

    def test_sweep_reports_persistent_failures_and_continues(self, rig, clock):
        store, setup, hv, pool = rig
        bad = pool.acquire(setup.id)
        good = pool.acquire(setup.id)
        hv.faults.fail("restore", permanent=True)
        with pytest.raises(DriverFailure):
            pool.release_and_reset(bad.id)
        hv.faults.clear("restore")
        hv.faults.fail("restore", on_call=2)  # call counter survives clear; bad retries first

        outcomes = dict(pool.scheduled_sweep(clock.now(), is_stale=lambda h: True))
        assert outcomes[bad.id] == "failed"
        assert outcomes[good.id] == "reset"


class TestConcurrentAcquire:
    def test_parallel_acquires_never_share_a_vm(self, store):
        directory = Directory(store)
        image = register_image(store, "golden", BASE)
        setup = directory.register_lab_setup("bench", image.digest)
        pool = VmPool(store, SimHypervisor(), capacity=lambda sid: 4)

        grabbed, denied = [], []
        barrier = threading.Barrier(10)

        def worker():
            barrier.wait()
            try:
                grabbed.append(pool.acquire(setup.id).id)
            except PoolExhausted:
                denied.append(1)

        threads = [threading.Thread(target=worker) for _ in range(10)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert len(grabbed) == 4 and len(denied) == 6
        assert len(set(grabbed)) == 4  # all distinct VMs
