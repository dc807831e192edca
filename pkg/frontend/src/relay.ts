/** Relay socket client: decoded desktop frames in, user input out.
 *
 * Input events carry a client sequence number that increases by one per
 * message for the life of the connection.  The relay rejects regressions
 * with close code 4409, so the counter lives here and nowhere else.
 */

import {
  decodeFrame,
  decodeSeqAck,
  encodeInput,
  encodeMessage,
  frameRgb,
  FrameUpdate,
  InputKind,
  Opcode,
  SeqAck,
  StreamDecoder,
} from "./wire.js";

/** Common surface of a browser WebSocket and the `ws` package client. */
export interface SocketLike {
  binaryType: string;
  send(data: Uint8Array): void;
  close(code?: number, reason?: string): void;
  onopen: ((event?: unknown) => void) | null;
  onmessage: ((event: { data: unknown }) => void) | null;
  onclose: ((event: { code?: number; reason?: string }) => void) | null;
  onerror: ((event?: unknown) => void) | null;
}

export interface DecodedFrame {
  frameId: number;
  width: number;
  height: number;
  rgb: Uint8Array;
}

export interface RelayHandlers {
  onFrame?: (frame: DecodedFrame) => void;
  onAck?: (ack: SeqAck) => void;
  onClose?: (code: number, reason: string) => void;
  onError?: (err: Error) => void;
}

function toBytes(data: unknown): Uint8Array {
  if (data instanceof ArrayBuffer) {
    return new Uint8Array(data);
  }
  if (ArrayBuffer.isView(data)) {
    return new Uint8Array(data.buffer, data.byteOffset, data.byteLength);
  }
  throw new Error(`relay socket delivered non-binary data: ${typeof data}`);
}

export class RelayClient {
  private decoder = new StreamDecoder();
  private clientSeq = 0;
  private open = false;
  lastAck: SeqAck | null = null;

  constructor(
    private readonly socket: SocketLike,
    private readonly handlers: RelayHandlers = {},
  ) {
    socket.binaryType = "arraybuffer";
    socket.onmessage = (event) => this.handleMessage(event.data);
    socket.onclose = (event) => {
      this.open = false;
      this.handlers.onClose?.(event.code ?? 1006, event.reason ?? "");
    };
    socket.onerror = () => {
      this.handlers.onError?.(new Error("relay socket error"));
    };
    socket.onopen = () => {
      this.open = true;
    };
  }

  /** Sequence number the next input will carry. */
  nextSeq(): number {
    return this.clientSeq + 1;
  }

  isOpen(): boolean {
    return this.open;
  }

  private handleMessage(data: unknown): void {
    let messages;
    try {
      messages = this.decoder.feed(toBytes(data));
    } catch (err) {
      this.handlers.onError?.(err as Error);
      this.socket.close(1002, "protocol error");
      return;
    }
    for (const msg of messages) {
      switch (msg.opcode) {
        case Opcode.FRAME: {
          try {
            const frame: FrameUpdate = decodeFrame(msg.payload);
            this.handlers.onFrame?.({
              frameId: frame.frameId,
              width: frame.width,
              height: frame.height,
              rgb: frameRgb(frame),
            });
          } catch (err) {
            this.handlers.onError?.(err as Error);
          }
          break;
        }
        case Opcode.SEQ: {
          this.lastAck = decodeSeqAck(msg.payload);
          this.handlers.onAck?.(this.lastAck);
          break;
        }
        case Opcode.PING: {
          this.socket.send(encodeMessage(Opcode.PONG, msg.payload));
          break;
        }
        case Opcode.CLOSE: {
          const reason = new TextDecoder().decode(msg.payload);
          this.handlers.onClose?.(1000, reason);
          this.socket.close();
          break;
        }
        default:
          break;
      }
    }
  }

  private sendInput(kind: InputKind, fields: Partial<{ code: number; x: number; y: number; button: number }>): number {
    this.clientSeq += 1;
    const seq = this.clientSeq;
    this.socket.send(encodeInput({ kind, clientSeq: seq, ...fields }));
    return seq;
  }

  sendKeyDown(code: number): number {
    return this.sendInput(InputKind.KEY_DOWN, { code });
  }

  sendKeyUp(code: number): number {
    return this.sendInput(InputKind.KEY_UP, { code });
  }

  sendPointerMove(x: number, y: number): number {
    return this.sendInput(InputKind.POINTER_MOVE, { x, y });
  }

  sendPointerButton(button: number, x: number, y: number): number {
    return this.sendInput(InputKind.POINTER_BUTTON, { button, x, y });
  }

  sendPing(): void {
    this.socket.send(encodeMessage(Opcode.PING, new Uint8Array(0)));
  }

  close(): void {
    this.open = false;
    this.socket.close(1000, "leaving");
  }
}
