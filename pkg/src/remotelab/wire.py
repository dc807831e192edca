"""Binary relay protocol: framing, input events, frame updates, RLE codec.

Every message on the client<->relay stream is framed as

    [opcode:1][length:4 BE][payload:length bytes]

Opcodes:
    0x01 Frame   payload: [frame_id:8 BE][width:2 BE][height:2 BE][encoding:1][data]
    0x02 Input   payload: [kind:1][client_seq:4 BE][fields per kind, 4 BE each]
    0x03 Ping    payload: opaque, echoed back
    0x04 Pong    payload: echo of the Ping payload
    0x05 Close   payload: optional utf-8 reason
    0x06 Seq     payload: [client_seq:4 BE][relay_seq:8 BE]  (input acknowledgement)

Input field layout per kind: KeyDown/KeyUp carry [code]; PointerMove carries
[x][y]; PointerButton carries [button][x][y].

The relay->upstream direction reuses the Input opcode but prefixes the merge
metadata the upstream log needs: [kind:1][relay_seq:8 BE][client_tag:4 BE]
[client_seq:4 BE][fields...].  That direction never reaches browsers.

Frame encodings: 0x01 RawRGB (data = width*height*3 bytes), 0x02 RleRGB
(runs of 1..255 identical RGB triples: [run:1][r][g][b]...).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum
from typing import List, Optional

from .errors import WireError

MAX_PAYLOAD = 16 * 1024 * 1024

HEADER = struct.Struct(">BI")
SEQ_ACK = struct.Struct(">IQ")
FRAME_HEAD = struct.Struct(">QHHB")


class Opcode(IntEnum):
    FRAME = 0x01
    INPUT = 0x02
    PING = 0x03
    PONG = 0x04
    CLOSE = 0x05
    SEQ = 0x06


class InputKind(IntEnum):
    KEY_DOWN = 0x01
    KEY_UP = 0x02
    POINTER_MOVE = 0x03
    POINTER_BUTTON = 0x04


class FrameEncoding(IntEnum):
    RAW_RGB = 0x01
    RLE_RGB = 0x02


# Number of 4-byte value fields following [kind][client_seq] per input kind.
_INPUT_FIELDS = {
    InputKind.KEY_DOWN: 1,
    InputKind.KEY_UP: 1,
    InputKind.POINTER_MOVE: 2,
    InputKind.POINTER_BUTTON: 3,
}


@dataclass(frozen=True)
class RelayMessage:
    opcode: Opcode
    payload: bytes

    def encode(self) -> bytes:
        if len(self.payload) > MAX_PAYLOAD:
            raise WireError("payload too large")
        return HEADER.pack(int(self.opcode), len(self.payload)) + self.payload


@dataclass(frozen=True)
class InputEvent:
    kind: InputKind
    client_seq: int
    code: int = 0
    x: int = 0
    y: int = 0
    button: int = 0

    def fields(self) -> List[int]:
        if self.kind in (InputKind.KEY_DOWN, InputKind.KEY_UP):
            return [self.code]
        if self.kind == InputKind.POINTER_MOVE:
            return [self.x, self.y]
        return [self.button, self.x, self.y]


@dataclass(frozen=True)
class MergedInput:
    """An input event stamped with its merge metadata (upstream direction)."""

    event: InputEvent
    relay_seq: int
    client_tag: int


@dataclass(frozen=True)
class FrameUpdate:
    frame_id: int
    width: int
    height: int
    encoding: FrameEncoding
    data: bytes

    def rgb_bytes(self) -> bytes:
        """Decoded RawRGB pixel data, whatever the wire encoding."""
        expected = self.width * self.height * 3
        if self.encoding == FrameEncoding.RAW_RGB:
            if len(self.data) != expected:
                raise WireError(
                    f"raw frame size {len(self.data)} != {expected} for "
                    f"{self.width}x{self.height}"
                )
            return self.data
        return rle_decode(self.data, expected)


def _u32(value: int, label: str) -> int:
    if not 0 <= value <= 0xFFFFFFFF:
        raise WireError(f"{label} out of u32 range: {value}")
    return value


def encode_input(event: InputEvent) -> bytes:
    parts = [struct.pack(">BI", int(event.kind), _u32(event.client_seq, "client_seq"))]
    for v in event.fields():
        parts.append(struct.pack(">I", _u32(v, "input field")))
    return b"".join(parts)


def decode_input(payload: bytes) -> InputEvent:
    if len(payload) < 5:
        raise WireError("input payload truncated")
    kind_raw, client_seq = struct.unpack_from(">BI", payload, 0)
    try:
        kind = InputKind(kind_raw)
    except ValueError:
        raise WireError(f"unknown input kind 0x{kind_raw:02x}") from None
    nfields = _INPUT_FIELDS[kind]
    if len(payload) != 5 + 4 * nfields:
        raise WireError(f"input payload length {len(payload)} wrong for kind {kind.name}")
    vals = struct.unpack_from(f">{nfields}I", payload, 5)
    return _event_from_fields(kind, client_seq, list(vals))


def _event_from_fields(kind: InputKind, client_seq: int, vals: List[int]) -> InputEvent:
    if kind in (InputKind.KEY_DOWN, InputKind.KEY_UP):
        return InputEvent(kind, client_seq, code=vals[0])
    if kind == InputKind.POINTER_MOVE:
        return InputEvent(kind, client_seq, x=vals[0], y=vals[1])
    return InputEvent(kind, client_seq, button=vals[0], x=vals[1], y=vals[2])


def encode_merged_input(merged: MergedInput) -> bytes:
    ev = merged.event
    parts = [
        struct.pack(
            ">BQII",
            int(ev.kind),
            merged.relay_seq,
            _u32(merged.client_tag, "client_tag"),
            _u32(ev.client_seq, "client_seq"),
        )
    ]
    for v in ev.fields():
        parts.append(struct.pack(">I", _u32(v, "input field")))
    return b"".join(parts)


def decode_merged_input(payload: bytes) -> MergedInput:
    if len(payload) < 17:
        raise WireError("merged input payload truncated")
    kind_raw, relay_seq, client_tag, client_seq = struct.unpack_from(">BQII", payload, 0)
    try:
        kind = InputKind(kind_raw)
    except ValueError:
        raise WireError(f"unknown input kind 0x{kind_raw:02x}") from None
    nfields = _INPUT_FIELDS[kind]
    if len(payload) != 17 + 4 * nfields:
        raise WireError("merged input payload length mismatch")
    vals = struct.unpack_from(f">{nfields}I", payload, 17)
    event = _event_from_fields(kind, client_seq, list(vals))
    return MergedInput(event=event, relay_seq=relay_seq, client_tag=client_tag)


def encode_frame(frame: FrameUpdate) -> bytes:
    if not (0 < frame.width <= 0xFFFF and 0 < frame.height <= 0xFFFF):
        raise WireError("frame dimensions out of range")
    expected = frame.width * frame.height * 3
    if frame.encoding == FrameEncoding.RAW_RGB and len(frame.data) != expected:
        raise WireError(f"raw frame size {len(frame.data)} != {expected}")
    if frame.encoding == FrameEncoding.RLE_RGB and len(frame.data) % 4 != 0:
        raise WireError("rle data length not a multiple of 4")
    return FRAME_HEAD.pack(frame.frame_id, frame.width, frame.height, int(frame.encoding)) + frame.data


def decode_frame(payload: bytes) -> FrameUpdate:
    if len(payload) < FRAME_HEAD.size:
        raise WireError("frame payload truncated")
    frame_id, width, height, enc_raw = FRAME_HEAD.unpack_from(payload, 0)
    try:
        encoding = FrameEncoding(enc_raw)
    except ValueError:
        raise WireError(f"unknown frame encoding 0x{enc_raw:02x}") from None
    frame = FrameUpdate(frame_id, width, height, encoding, payload[FRAME_HEAD.size:])
    frame.rgb_bytes()  # validate sizes eagerly
    return frame


def encode_seq_ack(client_seq: int, relay_seq: int) -> bytes:
    return SEQ_ACK.pack(_u32(client_seq, "client_seq"), relay_seq)


def decode_seq_ack(payload: bytes) -> tuple:
    if len(payload) != SEQ_ACK.size:
        raise WireError("seq ack payload length mismatch")
    return SEQ_ACK.unpack(payload)


def frame_message(frame: FrameUpdate) -> RelayMessage:
    return RelayMessage(Opcode.FRAME, encode_frame(frame))


def input_message(event: InputEvent) -> RelayMessage:
    return RelayMessage(Opcode.INPUT, encode_input(event))


def close_message(reason: str = "") -> RelayMessage:
    return RelayMessage(Opcode.CLOSE, reason.encode("utf-8"))


class StreamDecoder:
    """Incremental framing decoder for a byte stream.

    Feed arbitrary chunks; complete messages come out.  Any framing
    violation (unknown opcode, oversized length) raises WireError and the
    decoder must be discarded along with its connection.
    """

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> List[RelayMessage]:
        self._buf.extend(data)
        out: List[RelayMessage] = []
        while True:
            msg = self._try_next()
            if msg is None:
                return out
            out.append(msg)

    def pending(self) -> bool:
        """True if a partial message is buffered."""
        return bool(self._buf)

    def _try_next(self) -> Optional[RelayMessage]:
        if len(self._buf) < HEADER.size:
            return None
        opcode_raw, length = HEADER.unpack_from(self._buf, 0)
        try:
            opcode = Opcode(opcode_raw)
        except ValueError:
            raise WireError(f"unknown opcode 0x{opcode_raw:02x}") from None
        if length > MAX_PAYLOAD:
            raise WireError(f"declared payload length {length} exceeds cap")
        if len(self._buf) < HEADER.size + length:
            return None
        payload = bytes(self._buf[HEADER.size:HEADER.size + length])
        del self._buf[:HEADER.size + length]
        return RelayMessage(opcode, payload)


def decode_message(data: bytes) -> RelayMessage:
    """Decode exactly one framed message (datagram-style transports)."""
    dec = StreamDecoder()
    msgs = dec.feed(data)
    if len(msgs) != 1 or dec.pending():
        raise WireError("expected exactly one framed message")
    return msgs[0]


def rle_encode(data: bytes) -> bytes:
    """Run-length encode RGB triples; runs of 1..255."""
    if len(data) % 3 != 0:
        raise WireError("rgb data length not a multiple of 3")
    out = bytearray()
    i = 0
    n = len(data)
    while i < n:
        pixel = data[i:i + 3]
        run = 1
        j = i + 3
        while run < 255 and j < n and data[j:j + 3] == pixel:
            run += 1
            j += 3
        out.append(run)
        out.extend(pixel)
        i = j
    return bytes(out)


def rle_decode(data: bytes, expected_len: int) -> bytes:
    if len(data) % 4 != 0:
        raise WireError("rle data length not a multiple of 4")
    out = bytearray()
    for i in range(0, len(data), 4):
        run = data[i]
        if run == 0:
            raise WireError("rle run of zero")
        out.extend(data[i + 1:i + 4] * run)
        if len(out) > expected_len:
            raise WireError("rle decodes past expected size")
    if len(out) != expected_len:
        raise WireError(f"rle decoded {len(out)} bytes, expected {expected_len}")
    return bytes(out)
