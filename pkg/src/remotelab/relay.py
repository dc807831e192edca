"""Remote-desktop relay: one upstream per session fanned out to N viewers.

Every input event from any viewer passes through a single merge point that
stamps it with a session-global sequence number before it is written to the
upstream socket, so the desktop sees one totally ordered input stream no
matter how many people share the screen.  Frames travel the other way and are
broadcast to every attached viewer through a small bounded queue; when a
viewer cannot keep up the oldest queued frame is dropped, never the newest,
and control messages (acks, pongs, close) are never dropped at all.
"""

from __future__ import annotations

import logging
import socket
import threading
from collections import deque
from typing import Callable, Deque, Dict, List, Optional

from .errors import (
    ChannelClosed,
    ConnectFailed,
    DuplicateUpstream,
    NoUpstream,
    StaleSequence,
    WireError,
)
from .wire import (
    InputEvent,
    MergedInput,
    Opcode,
    RelayMessage,
    StreamDecoder,
    close_message,
    decode_frame,
    decode_input,
    encode_merged_input,
    encode_seq_ack,
)

logger = logging.getLogger(__name__)

OUTBOUND_FRAME_LIMIT = 8  # queued frames per viewer before conflation kicks in
_RECV_CHUNK = 65536


class ClientChannel:
    """Outbound queue for one attached viewer.

    Frames and control messages live in separate queues: frames are subject
    to drop-oldest conflation, control messages are not.  Control drains
    first so an input ack can never starve behind a backlog of frames.
    """

    def __init__(self, tag: int, session_id: str):
        self.tag = tag
        self.session_id = session_id
        self.decoder = StreamDecoder()
        self._cond = threading.Condition()
        self._frames: Deque[bytes] = deque()
        self._control: Deque[bytes] = deque()
        self._closed = False
        self.frames_dropped = 0
        self.frames_delivered = 0

    def push_frame(self, data: bytes) -> None:
        with self._cond:
            if self._closed:
                return
            if len(self._frames) >= OUTBOUND_FRAME_LIMIT:
                self._frames.popleft()
                self.frames_dropped += 1
            self._frames.append(data)
            self._cond.notify()

    def push_control(self, data: bytes) -> None:
        with self._cond:
            if self._closed:
                return
            self._control.append(data)
            self._cond.notify()

    def next_outbound(self, timeout: Optional[float] = None) -> Optional[bytes]:
        """Next message to send, or None on timeout / after close."""
        with self._cond:
            if not self._control and not self._frames:
                if self._closed:
                    return None
                self._cond.wait(timeout)
            if self._control:
                return self._control.popleft()
            if self._frames:
                self.frames_delivered += 1
                return self._frames.popleft()
            return None

    def close(self) -> None:
        with self._cond:
            self._closed = True
            self._cond.notify_all()

    @property
    def closed(self) -> bool:
        with self._cond:
            return self._closed

    def pending(self) -> int:
        with self._cond:
            return len(self._control) + len(self._frames)


class SessionRelay:
    """Upstream socket plus the viewer fan-out for one session."""

    def __init__(self, session_id: str, sock: socket.socket, on_dead: Callable[[str, str, bool], None]):
        self.session_id = session_id
        self._sock = sock
        self._on_dead = on_dead
        self._merge_lock = threading.Lock()
        self._relay_seq = 0
        self._last_client_seq: Dict[int, int] = {}
        self._clients_lock = threading.Lock()
        self._clients: Dict[int, ClientChannel] = {}
        self._next_tag = 1
        self._latest_frame: Optional[bytes] = None
        self.frames_relayed = 0
        self.inputs_relayed = 0
        self._closing = False
        self._deliberate = False
        self._reader = threading.Thread(
            target=self._read_upstream, name=f"relay-{session_id}", daemon=True
        )
        self._reader.start()

    # -- viewers ---------------------------------------------------------

    def attach(self) -> ClientChannel:
        with self._clients_lock:
            if self._closing:
                raise ChannelClosed("session relay is closed")
            tag = self._next_tag
            self._next_tag += 1
            channel = ClientChannel(tag, self.session_id)
            self._clients[tag] = channel
        # a late joiner immediately sees the current screen
        latest = self._latest_frame
        if latest is not None:
            channel.push_frame(latest)
        return channel

    def detach(self, channel: ClientChannel) -> None:
        with self._clients_lock:
            self._clients.pop(channel.tag, None)
        channel.close()

    def client_count(self) -> int:
        with self._clients_lock:
            return len(self._clients)

    # -- downstream -> upstream -------------------------------------------

    def submit_input(self, channel: ClientChannel, event: InputEvent) -> int:
        """Merge one viewer input into the session-global stream."""
        with self._merge_lock:
            if self._closing:
                raise ChannelClosed("session relay is closed")
            last = self._last_client_seq.get(channel.tag, 0)
            if event.client_seq <= last:
                raise StaleSequence(
                    f"client_seq {event.client_seq} not after {last}"
                )
            self._relay_seq += 1
            relay_seq = self._relay_seq
            self._last_client_seq[channel.tag] = event.client_seq
            data = RelayMessage(
                Opcode.INPUT, encode_merged_input(MergedInput(event, relay_seq, channel.tag))
            ).encode()
            try:
                self._sock.sendall(data)
            except OSError as exc:
                self._relay_seq -= 1
                self._last_client_seq[channel.tag] = last
                self._die(f"upstream write failed: {exc}")
                raise ChannelClosed("upstream is gone") from exc
            self.inputs_relayed += 1
        channel.push_control(
            RelayMessage(Opcode.SEQ, encode_seq_ack(event.client_seq, relay_seq)).encode()
        )
        return relay_seq

    def handle_client_bytes(self, channel: ClientChannel, data: bytes) -> List[int]:
        """Feed raw bytes from a viewer; returns relay seqs of merged inputs."""
        merged = []
        for message in channel.decoder.feed(data):
            if message.opcode == Opcode.INPUT:
                merged.append(self.submit_input(channel, decode_input(message.payload)))
            elif message.opcode == Opcode.PING:
                channel.push_control(RelayMessage(Opcode.PONG, b"").encode())
            elif message.opcode == Opcode.PONG:
                pass
            elif message.opcode == Opcode.CLOSE:
                channel.close()
            else:
                raise WireError(f"unexpected opcode {message.opcode:#x} from viewer")
        return merged

    def send_ping(self) -> None:
        with self._merge_lock:
            if self._closing:
                return
            try:
                self._sock.sendall(RelayMessage(Opcode.PING, b"").encode())
            except OSError as exc:
                self._die(f"upstream ping failed: {exc}")

    # -- upstream -> downstream ---------------------------------------------

    def _read_upstream(self) -> None:
        decoder = StreamDecoder()
        try:
            while True:
                chunk = self._sock.recv(_RECV_CHUNK)
                if not chunk:
                    self._die("upstream closed the connection")
                    return
                for message in decoder.feed(chunk):
                    self._handle_upstream(message)
        except (OSError, WireError) as exc:
            self._die(f"upstream read failed: {exc}")

    def _handle_upstream(self, message: RelayMessage) -> None:
        if message.opcode == Opcode.FRAME:
            decode_frame(message.payload)  # reject malformed frames early
            data = message.encode()
            self._latest_frame = data
            self.frames_relayed += 1
            with self._clients_lock:
                channels = list(self._clients.values())
            for channel in channels:
                channel.push_frame(data)
        elif message.opcode in (Opcode.PONG, Opcode.PING, Opcode.SEQ):
            pass
        elif message.opcode == Opcode.CLOSE:
            self._die("upstream sent close")
        else:
            self._die(f"unexpected opcode {message.opcode:#x} from upstream")

    # -- teardown -------------------------------------------------------------

    def _die(self, reason: str) -> None:
        notify = False
        with self._clients_lock:
            if not self._closing:
                self._closing = True
                notify = True
            channels = list(self._clients.values())
            self._clients.clear()
        if notify:
            log = logger.info if self._deliberate else logger.warning
            log("relay %s: %s", self.session_id, reason)
            try:
                self._sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            self._sock.close()
            for channel in channels:
                channel.push_control(close_message().encode())
                channel.close()
            self._on_dead(self.session_id, reason, self._deliberate)

    def close(self) -> None:
        """Deliberate shutdown; viewers get a Close message."""
        self._deliberate = True
        self._die("session ended")
        if threading.current_thread() is not self._reader:
            self._reader.join(timeout=2.0)

    @property
    def closed(self) -> bool:
        with self._clients_lock:
            return self._closing


class RelayHub:
    """Registry of live session relays."""

    def __init__(
        self,
        notify_failure: Optional[Callable[[str, str], None]] = None,
        connect_timeout: float = 5.0,
    ):
        self._lock = threading.Lock()
        self._relays: Dict[str, SessionRelay] = {}
        self._notify_failure = notify_failure or (lambda session_id, reason: None)
        self._connect_timeout = connect_timeout

    def open_upstream(self, session_id: str, endpoint: str) -> None:
        with self._lock:
            if session_id in self._relays:
                raise DuplicateUpstream(f"session {session_id} already has an upstream")
        host, _, port = endpoint.rpartition(":")
        try:
            sock = socket.create_connection((host, int(port)), timeout=self._connect_timeout)
        except (OSError, ValueError) as exc:
            raise ConnectFailed(f"cannot reach desktop at {endpoint}: {exc}") from exc
        sock.settimeout(None)
        relay = SessionRelay(session_id, sock, self._relay_died)
        loser = False
        with self._lock:
            if session_id in self._relays:
                loser = True
            else:
                self._relays[session_id] = relay
        if loser:
            relay.close()
            raise DuplicateUpstream(f"session {session_id} already has an upstream")

    def _relay_died(self, session_id: str, reason: str, deliberate: bool) -> None:
        with self._lock:
            self._relays.pop(session_id, None)
        if not deliberate:
            self._notify_failure(session_id, reason)

    def relay_for(self, session_id: str) -> SessionRelay:
        with self._lock:
            relay = self._relays.get(session_id)
        if relay is None:
            raise NoUpstream(f"no live relay for session {session_id}")
        return relay

    def attach_client(self, session_id: str) -> ClientChannel:
        return self.relay_for(session_id).attach()

    def detach_client(self, channel: ClientChannel) -> None:
        with self._lock:
            relay = self._relays.get(channel.session_id)
        if relay is not None:
            relay.detach(channel)
        else:
            channel.close()

    def close_session_channels(self, session_id: str) -> None:
        with self._lock:
            relay = self._relays.pop(session_id, None)
        if relay is not None:
            relay.close()

    def census(self) -> Dict[str, int]:
        with self._lock:
            relays = dict(self._relays)
        return {sid: r.client_count() for sid, r in relays.items()}

    def shutdown(self) -> None:
        with self._lock:
            relays = list(self._relays.values())
            self._relays.clear()
        for relay in relays:
            relay.close()
