/** Binary relay protocol: framing, desktop frames, input events.
 *
 * Every message is [opcode u8][payload length u32 BE][payload].  All
 * integers are big-endian.  The encoder/decoder here must stay in exact
 * agreement with the gateway; any drift shows up as a WireError or, worse,
 * a silently garbled canvas.
 */

export const MAX_PAYLOAD = 16 * 1024 * 1024;
export const HEADER_SIZE = 5;

export enum Opcode {
  FRAME = 0x01,
  INPUT = 0x02,
  PING = 0x03,
  PONG = 0x04,
  CLOSE = 0x05,
  SEQ = 0x06,
}

export enum InputKind {
  KEY_DOWN = 0x01,
  KEY_UP = 0x02,
  POINTER_MOVE = 0x03,
  POINTER_BUTTON = 0x04,
}

export enum FrameEncoding {
  RAW_RGB = 0x01,
  RLE_RGB = 0x02,
}

export class WireError extends Error {}

export interface RelayMessage {
  opcode: Opcode;
  payload: Uint8Array;
}

export interface FrameUpdate {
  frameId: number;
  width: number;
  height: number;
  encoding: FrameEncoding;
  data: Uint8Array;
}

export interface InputEvent {
  kind: InputKind;
  clientSeq: number;
  code?: number;
  x?: number;
  y?: number;
  button?: number;
}

export interface SeqAck {
  clientSeq: number;
  relaySeq: number;
}

function view(bytes: Uint8Array): DataView {
  return new DataView(bytes.buffer, bytes.byteOffset, bytes.byteLength);
}

function checkU32(value: number, label: string): number {
  if (!Number.isInteger(value) || value < 0 || value > 0xffffffff) {
    throw new WireError(`${label} out of u32 range: ${value}`);
  }
  return value;
}

export function encodeMessage(opcode: Opcode, payload: Uint8Array): Uint8Array {
  if (payload.length > MAX_PAYLOAD) {
    throw new WireError(`payload length ${payload.length} exceeds cap`);
  }
  const out = new Uint8Array(HEADER_SIZE + payload.length);
  const dv = view(out);
  dv.setUint8(0, opcode);
  dv.setUint32(1, payload.length, false);
  out.set(payload, HEADER_SIZE);
  return out;
}

function inputFields(event: InputEvent): number[] {
  switch (event.kind) {
    case InputKind.KEY_DOWN:
    case InputKind.KEY_UP:
      return [event.code ?? 0];
    case InputKind.POINTER_MOVE:
      return [event.x ?? 0, event.y ?? 0];
    case InputKind.POINTER_BUTTON:
      return [event.button ?? 0, event.x ?? 0, event.y ?? 0];
  }
}

export function encodeInput(event: InputEvent): Uint8Array {
  const fields = inputFields(event);
  const payload = new Uint8Array(5 + 4 * fields.length);
  const dv = view(payload);
  dv.setUint8(0, event.kind);
  dv.setUint32(1, checkU32(event.clientSeq, "client_seq"), false);
  fields.forEach((value, i) => {
    dv.setUint32(5 + 4 * i, checkU32(value, "input field"), false);
  });
  return encodeMessage(Opcode.INPUT, payload);
}

export function decodeFrame(payload: Uint8Array): FrameUpdate {
  if (payload.length < 13) {
    throw new WireError("frame payload truncated");
  }
  const dv = view(payload);
  const frameId = Number(dv.getBigUint64(0, false));
  const width = dv.getUint16(8, false);
  const height = dv.getUint16(10, false);
  const encoding = dv.getUint8(12);
  if (encoding !== FrameEncoding.RAW_RGB && encoding !== FrameEncoding.RLE_RGB) {
    throw new WireError(`unknown frame encoding 0x${encoding.toString(16)}`);
  }
  const data = payload.subarray(13);
  const expected = width * height * 3;
  if (encoding === FrameEncoding.RAW_RGB && data.length !== expected) {
    throw new WireError(`raw frame size ${data.length} != ${expected}`);
  }
  return { frameId, width, height, encoding, data };
}

export function decodeSeqAck(payload: Uint8Array): SeqAck {
  if (payload.length !== 12) {
    throw new WireError("seq ack payload length mismatch");
  }
  const dv = view(payload);
  return {
    clientSeq: dv.getUint32(0, false),
    relaySeq: Number(dv.getBigUint64(4, false)),
  };
}

/** Expand an RLE frame body ([run][r][g][b] quads) to raw RGB bytes. */
export function rleDecode(data: Uint8Array, expectedLen: number): Uint8Array {
  if (data.length % 4 !== 0) {
    throw new WireError("rle data length not a multiple of 4");
  }
  const out = new Uint8Array(expectedLen);
  let cursor = 0;
  for (let i = 0; i < data.length; i += 4) {
    const run = data[i];
    if (run === 0) {
      throw new WireError("rle run of zero");
    }
    if (cursor + run * 3 > expectedLen) {
      throw new WireError("rle output overruns frame");
    }
    const r = data[i + 1];
    const g = data[i + 2];
    const b = data[i + 3];
    for (let p = 0; p < run; p++) {
      out[cursor++] = r;
      out[cursor++] = g;
      out[cursor++] = b;
    }
  }
  if (cursor !== expectedLen) {
    throw new WireError(`rle output short: ${cursor} != ${expectedLen}`);
  }
  return out;
}

export function rleEncode(rgb: Uint8Array): Uint8Array {
  if (rgb.length % 3 !== 0) {
    throw new WireError("rgb data length not a multiple of 3");
  }
  const out: number[] = [];
  let i = 0;
  while (i < rgb.length) {
    const r = rgb[i];
    const g = rgb[i + 1];
    const b = rgb[i + 2];
    let run = 1;
    let j = i + 3;
    while (
      run < 255 &&
      j < rgb.length &&
      rgb[j] === r &&
      rgb[j + 1] === g &&
      rgb[j + 2] === b
    ) {
      run += 1;
      j += 3;
    }
    out.push(run, r, g, b);
    i = j;
  }
  return new Uint8Array(out);
}

export function frameRgb(frame: FrameUpdate): Uint8Array {
  const expected = frame.width * frame.height * 3;
  if (frame.encoding === FrameEncoding.RAW_RGB) {
    return frame.data;
  }
  return rleDecode(frame.data, expected);
}

/** Incremental framing decoder.  WebSocket transports deliver whole
 * messages, but a single binary blob may still carry several of them
 * back to back, so feed() always drains everything available. */
export class StreamDecoder {
  private buf = new Uint8Array(0);

  feed(chunk: Uint8Array): RelayMessage[] {
    if (this.buf.length === 0) {
      this.buf = chunk.slice();
    } else {
      const joined = new Uint8Array(this.buf.length + chunk.length);
      joined.set(this.buf, 0);
      joined.set(chunk, this.buf.length);
      this.buf = joined;
    }
    const out: RelayMessage[] = [];
    for (;;) {
      const msg = this.tryNext();
      if (msg === null) {
        return out;
      }
      out.push(msg);
    }
  }

  pending(): boolean {
    return this.buf.length > 0;
  }

  private tryNext(): RelayMessage | null {
    if (this.buf.length < HEADER_SIZE) {
      return null;
    }
    const dv = view(this.buf);
    const opcode = dv.getUint8(0);
    const length = dv.getUint32(1, false);
    if (opcode < Opcode.FRAME || opcode > Opcode.SEQ) {
      throw new WireError(`unknown opcode 0x${opcode.toString(16)}`);
    }
    if (length > MAX_PAYLOAD) {
      throw new WireError(`declared payload length ${length} exceeds cap`);
    }
    if (this.buf.length < HEADER_SIZE + length) {
      return null;
    }
    const payload = this.buf.slice(HEADER_SIZE, HEADER_SIZE + length);
    this.buf = this.buf.slice(HEADER_SIZE + length);
    return { opcode, payload };
  }
}
