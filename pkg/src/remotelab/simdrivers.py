"""In-process stand-ins for the lab's external machinery.

These drivers model a hypervisor with copy-on-write disks, a streaming VM
desktop, a conference service, a camera, and breadboard hardware, all backed
by plain data structures so tests and demo deployments run anywhere.  Faults
are injected through a FaultPlan shared across drivers, and every driver call
is recorded in a CallLog so tests can assert on interaction order.
"""

from __future__ import annotations

import hashlib
import io
import math
import socket
import struct
import threading
import time
from datetime import datetime, timezone
from typing import Callable, Dict, List, Optional, Tuple

from .errors import AdapterFailure, DriverFailure
from .model import ChannelDatatype, ChannelDescriptor, ChannelKind
from .util import Clock, SystemClock, ensure_utc
from .vmpool import VmProbe
from .wire import (
    FrameEncoding,
    FrameUpdate,
    MergedInput,
    Opcode,
    RelayMessage,
    StreamDecoder,
    decode_merged_input,
    encode_frame,
)


class SimFault(Exception):
    """Deliberate failure injected by a FaultPlan."""


class FaultPlan:
    """Schedules failures and latency by operation name.

    fail("restore", on_call=2) makes the second restore call raise; with
    permanent=True every call from the Nth on fails.  Call counters are
    per operation and survive across drivers sharing the plan.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._counts: Dict[str, int] = {}
        self._failures: Dict[str, Tuple[int, bool]] = {}
        self._latency: Dict[str, float] = {}

    def fail(self, op: str, on_call: int = 1, permanent: bool = False) -> None:
        with self._lock:
            self._failures[op] = (on_call, permanent)

    def latency(self, op: str, seconds: float) -> None:
        with self._lock:
            self._latency[op] = seconds

    def clear(self, op: Optional[str] = None) -> None:
        with self._lock:
            if op is None:
                self._failures.clear()
                self._latency.clear()
                self._counts.clear()
            else:
                self._failures.pop(op, None)
                self._latency.pop(op, None)

    def check(self, op: str) -> None:
        with self._lock:
            count = self._counts.get(op, 0) + 1
            self._counts[op] = count
            plan = self._failures.get(op)
            delay = self._latency.get(op, 0.0)
        if delay:
            time.sleep(delay)
        if plan is not None:
            on_call, permanent = plan
            if count == on_call or (permanent and count >= on_call):
                raise SimFault(f"injected failure for {op} (call {count})")

    def calls_made(self, op: str) -> int:
        with self._lock:
            return self._counts.get(op, 0)


class CallLog:
    def __init__(self):
        self._lock = threading.Lock()
        self._calls: List[Tuple[str, dict]] = []

    def record(self, op: str, **details) -> None:
        with self._lock:
            self._calls.append((op, details))

    def calls(self, op: Optional[str] = None) -> List[Tuple[str, dict]]:
        with self._lock:
            if op is None:
                return list(self._calls)
            return [c for c in self._calls if c[0] == op]

    def count(self, op: str) -> int:
        return len(self.calls(op))


def make_checkerboard(width: int, height: int, frame_id: int, square: int = 16) -> bytes:
    """RGB pixels: checkerboard shifted by frame_id, with the frame_id itself
    embedded big-endian in the first eight bytes so receivers can verify
    pixel data independently of the frame header."""
    shift = frame_id % (square * 2)
    row_on = bytearray()
    row_off = bytearray()
    for x in range(width):
        bright = ((x + shift) // square) % 2 == 0
        row_on += b"\xe0\xe0\xe0" if bright else b"\x20\x20\x20"
        row_off += b"\x20\x20\x20" if bright else b"\xe0\xe0\xe0"
    out = bytearray()
    for y in range(height):
        out += row_on if (y // square) % 2 == 0 else row_off
    out[:8] = struct.pack(">Q", frame_id)
    return bytes(out)


class SimDesktopServer:
    """TCP server speaking the relay protocol like a VM's desktop agent.

    Streams frames to whoever is connected and records every merged input
    it receives.  The frame counter keeps climbing across reconnects, the
    way a real desktop's screen does not reset when a viewer drops.
    """

    def __init__(
        self,
        width: int = 320,
        height: int = 240,
        fps: float = 0.0,
        encoding: FrameEncoding = FrameEncoding.RAW_RGB,
    ):
        self.width = width
        self.height = height
        self.fps = fps
        self.encoding = encoding
        self._lock = threading.Lock()
        self._inputs: List[MergedInput] = []
        self._frame_id = 0
        self._conn: Optional[socket.socket] = None
        self._server: Optional[socket.socket] = None
        self._running = False
        self._threads: List[threading.Thread] = []
        self.pings_answered = 0

    def start(self) -> str:
        self._server = socket.create_server(("127.0.0.1", 0))
        self._server.settimeout(0.2)  # lets the accept loop notice stop()
        self._running = True
        accept = threading.Thread(target=self._accept_loop, daemon=True, name="sim-desktop-accept")
        accept.start()
        self._threads.append(accept)
        host, port = self._server.getsockname()
        return f"{host}:{port}"

    def stop(self) -> None:
        self._running = False
        with self._lock:
            conn, self._conn = self._conn, None
        if conn is not None:
            try:
                conn.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            conn.close()
        if self._server is not None:
            self._server.close()
        for t in self._threads:
            if t is not threading.current_thread():
                t.join(timeout=2.0)
        self._threads.clear()

    def _accept_loop(self) -> None:
        while self._running:
            try:
                conn, _ = self._server.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            conn.settimeout(None)
            with self._lock:
                old, self._conn = self._conn, conn
            if old is not None:
                old.close()
            reader = threading.Thread(
                target=self._serve_client, args=(conn,), daemon=True, name="sim-desktop-client"
            )
            reader.start()
            self._threads.append(reader)
            if self.fps > 0:
                pump = threading.Thread(
                    target=self._pump_loop, args=(conn,), daemon=True, name="sim-desktop-pump"
                )
                pump.start()
                self._threads.append(pump)

    def _serve_client(self, conn: socket.socket) -> None:
        decoder = StreamDecoder()
        try:
            while True:
                chunk = conn.recv(65536)
                if not chunk:
                    return
                for message in decoder.feed(chunk):
                    if message.opcode == Opcode.INPUT:
                        with self._lock:
                            self._inputs.append(decode_merged_input(message.payload))
                    elif message.opcode == Opcode.PING:
                        conn.sendall(RelayMessage(Opcode.PONG, b"").encode())
                        with self._lock:
                            self.pings_answered += 1
                    elif message.opcode == Opcode.CLOSE:
                        return
        except OSError:
            return

    def _pump_loop(self, conn: socket.socket) -> None:
        period = 1.0 / self.fps
        while self._running:
            if not self.send_frame(conn=conn):
                return
            time.sleep(period)

    def send_frame(self, conn: Optional[socket.socket] = None) -> bool:
        """Emit the next frame; False once the viewer has gone away."""
        with self._lock:
            if conn is None:
                conn = self._conn
            if conn is None:
                return False
            self._frame_id += 1
            frame_id = self._frame_id
        pixels = make_checkerboard(self.width, self.height, frame_id)
        if self.encoding == FrameEncoding.RLE_RGB:
            from .wire import rle_encode

            data = rle_encode(pixels)
        else:
            data = pixels
        update = FrameUpdate(frame_id, self.width, self.height, self.encoding, data)
        try:
            conn.sendall(RelayMessage(Opcode.FRAME, encode_frame(update)).encode())
            return True
        except OSError:
            return False

    def send_frames(self, n: int) -> int:
        sent = 0
        for _ in range(n):
            if not self.send_frame():
                break
            sent += 1
        return sent

    def received_inputs(self) -> List[MergedInput]:
        with self._lock:
            return list(self._inputs)

    def connected(self) -> bool:
        with self._lock:
            return self._conn is not None

    @property
    def last_frame_id(self) -> int:
        with self._lock:
            return self._frame_id


class SimHypervisor:
    """Hypervisor with per-VM differencing disks over an immutable base.

    restore_to_base throws the differencing layer away, which is exactly
    what resetting a lab VM between groups does.
    """

    def __init__(
        self,
        fault_plan: Optional[FaultPlan] = None,
        log: Optional[CallLog] = None,
        desktop_factory: Optional[Callable[[str], SimDesktopServer]] = None,
    ):
        self.faults = fault_plan or FaultPlan()
        self.log = log or CallLog()
        self._desktop_factory = desktop_factory
        self._lock = threading.Lock()
        self._disks: Dict[str, bytearray] = {}
        self._base: Dict[str, bytes] = {}
        self._running: Dict[str, bool] = {}
        self.desktops: Dict[str, SimDesktopServer] = {}

    def _guard(self, op: str, vm_id: str) -> None:
        try:
            self.faults.check(op)
        except SimFault as exc:
            self.log.record(op, vm_id=vm_id, failed=True)
            raise DriverFailure(str(exc)) from exc

    def provision(self, vm_id: str, setup_id: str, base_digest: str, content: bytes) -> str:
        self._guard("provision", vm_id)
        with self._lock:
            self._disks[vm_id] = bytearray(content)
            self._base[vm_id] = bytes(content)
            self._running[vm_id] = False
        if self._desktop_factory is not None:
            desktop = self._desktop_factory(vm_id)
            endpoint = desktop.start()
            self.desktops[vm_id] = desktop
        else:
            endpoint = f"sim:{vm_id}"
        self.log.record("provision", vm_id=vm_id, setup_id=setup_id, endpoint=endpoint)
        return endpoint

    def start(self, vm_id: str) -> None:
        self._guard("start", vm_id)
        with self._lock:
            if vm_id not in self._disks:
                raise DriverFailure(f"unknown vm {vm_id}")
            self._running[vm_id] = True
        self.log.record("start", vm_id=vm_id)

    def stop(self, vm_id: str) -> None:
        self._guard("stop", vm_id)
        with self._lock:
            if vm_id not in self._disks:
                raise DriverFailure(f"unknown vm {vm_id}")
            self._running[vm_id] = False
        self.log.record("stop", vm_id=vm_id)

    def restore_to_base(self, vm_id: str) -> str:
        self._guard("restore", vm_id)
        with self._lock:
            base = self._base.get(vm_id)
            if base is None:
                raise DriverFailure(f"unknown vm {vm_id}")
            self._disks[vm_id] = bytearray(base)
            digest = hashlib.sha256(base).hexdigest()
        self.log.record("restore", vm_id=vm_id, digest=digest)
        return digest

    def probe(self, vm_id: str) -> VmProbe:
        with self._lock:
            if vm_id not in self._disks:
                raise DriverFailure(f"unknown vm {vm_id}")
            digest = hashlib.sha256(bytes(self._disks[vm_id])).hexdigest()
            return VmProbe(running=self._running[vm_id], digest=digest)

    # test helpers, not part of the driver contract

    def mutate_disk(self, vm_id: str, data: bytes = b"scratch") -> None:
        with self._lock:
            self._disks[vm_id] += data

    def disk_digest(self, vm_id: str) -> str:
        with self._lock:
            return hashlib.sha256(bytes(self._disks[vm_id])).hexdigest()

    def shutdown(self) -> None:
        for desktop in self.desktops.values():
            desktop.stop()
        self.desktops.clear()


class SimConference:
    def __init__(self, fault_plan: Optional[FaultPlan] = None, log: Optional[CallLog] = None):
        self.faults = fault_plan or FaultPlan()
        self.log = log or CallLog()
        self._lock = threading.Lock()
        self._counter = 0
        self.live_rooms: set = set()

    def create_room(self, session_id: str) -> str:
        try:
            self.faults.check("create_room")
        except SimFault as exc:
            self.log.record("create_room", session_id=session_id, failed=True)
            raise AdapterFailure(str(exc)) from exc
        with self._lock:
            self._counter += 1
            room_id = f"room-{self._counter}"
            self.live_rooms.add(room_id)
        self.log.record("create_room", session_id=session_id, room_id=room_id)
        return room_id

    def destroy_room(self, room_id: str) -> None:
        try:
            self.faults.check("destroy_room")
        except SimFault as exc:
            self.log.record("destroy_room", room_id=room_id, failed=True)
            raise AdapterFailure(str(exc)) from exc
        with self._lock:
            self.live_rooms.discard(room_id)
        self.log.record("destroy_room", room_id=room_id)

    def join_url(self, room_id: str) -> str:
        return f"https://conference.invalid/{room_id}"


class SimCamera:
    """Synthetic JPEG frames with non-decreasing capture timestamps."""

    def __init__(self, width: int = 160, height: int = 120, clock: Optional[Clock] = None):
        self.width = width
        self.height = height
        self._clock = clock or SystemClock()
        self._lock = threading.Lock()
        self._counter = 0
        self._prev = datetime.min.replace(tzinfo=timezone.utc)

    def next_frame(self) -> Tuple[datetime, bytes]:
        from PIL import Image

        with self._lock:
            self._counter += 1
            n = self._counter
            at = max(self._prev, ensure_utc(self._clock.now()))
            self._prev = at
        img = Image.new("RGB", (self.width, self.height))
        px = img.load()
        for y in range(self.height):
            for x in range(self.width):
                px[x, y] = ((x * 3 + n * 7) % 256, (y * 5) % 256, (n * 11) % 256)
        buf = io.BytesIO()
        img.save(buf, format="JPEG", quality=70)
        return at, buf.getvalue()


class SimHardware:
    """Waveform sensors and latched actuators for registered channels."""

    def __init__(
        self,
        seed: int = 0,
        clock: Optional[Clock] = None,
        fault_plan: Optional[FaultPlan] = None,
        log: Optional[CallLog] = None,
    ):
        self.seed = seed
        self._clock = clock or SystemClock()
        self.faults = fault_plan or FaultPlan()
        self.log = log or CallLog()
        self._lock = threading.Lock()
        self._channels: Dict[str, ChannelDescriptor] = {}
        self._latched: Dict[str, object] = {}

    def register(self, descriptor: ChannelDescriptor) -> None:
        with self._lock:
            self._channels[descriptor.channel_id] = descriptor
            if descriptor.kind == ChannelKind.ACTUATOR:
                default = False if descriptor.datatype == ChannelDatatype.BOOL else (
                    descriptor.bounds[0] if descriptor.bounds else 0.0
                )
                self._latched.setdefault(descriptor.channel_id, default)

    def _phase(self, channel_id: str) -> float:
        h = hashlib.sha256(f"{self.seed}:{channel_id}".encode()).digest()
        return int.from_bytes(h[:4], "big") / 0xFFFFFFFF * 2 * math.pi

    def read(self, channel_id: str, at: datetime):
        try:
            self.faults.check("hw_read")
        except SimFault as exc:
            raise DriverFailure(str(exc)) from exc
        with self._lock:
            desc = self._channels.get(channel_id)
            if desc is None:
                raise DriverFailure(f"unknown channel {channel_id}")
            if channel_id in self._latched:
                value = self._latched[channel_id]
                self.log.record("hw_read", channel_id=channel_id, value=value)
                return value
        t = ensure_utc(at).timestamp()
        phase = self._phase(channel_id)
        wave = math.sin(2 * math.pi * t / 60.0 + phase)
        if desc.datatype == ChannelDatatype.BOOL:
            value = wave >= 0.0
        else:
            lo, hi = desc.bounds if desc.bounds else (0.0, 1.0)
            value = lo + (wave + 1.0) / 2.0 * (hi - lo)
        self.log.record("hw_read", channel_id=channel_id, value=value)
        return value

    def write(self, channel_id: str, value):
        try:
            self.faults.check("hw_write")
        except SimFault as exc:
            raise DriverFailure(str(exc)) from exc
        with self._lock:
            if channel_id not in self._channels:
                raise DriverFailure(f"unknown channel {channel_id}")
            self._latched[channel_id] = value
        self.log.record("hw_write", channel_id=channel_id, value=value)
        return value

    def latched(self, channel_id: str):
        with self._lock:
            return self._latched.get(channel_id)
