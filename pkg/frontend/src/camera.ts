/** Reader for the camera's multipart/x-mixed-replace stream.
 *
 * Each part is a small header block (Content-Type, Content-Length,
 * X-Timestamp) followed by one JPEG.  Content-Length makes the parse
 * exact; no guessing at JPEG boundaries.
 */

export interface CameraPart {
  timestamp: string;
  jpeg: Uint8Array;
}

const HEADER_END = new Uint8Array([0x0d, 0x0a, 0x0d, 0x0a]); // \r\n\r\n

function indexOf(haystack: Uint8Array, needle: Uint8Array, from = 0): number {
  outer: for (let i = from; i + needle.length <= haystack.length; i++) {
    for (let j = 0; j < needle.length; j++) {
      if (haystack[i + j] !== needle[j]) continue outer;
    }
    return i;
  }
  return -1;
}

export class MultipartParser {
  private buf = new Uint8Array(0);

  feed(chunk: Uint8Array): CameraPart[] {
    const joined = new Uint8Array(this.buf.length + chunk.length);
    joined.set(this.buf, 0);
    joined.set(chunk, this.buf.length);
    this.buf = joined;

    const out: CameraPart[] = [];
    for (;;) {
      const part = this.tryNext();
      if (part === null) {
        return out;
      }
      out.push(part);
    }
  }

  private tryNext(): CameraPart | null {
    const headerEnd = indexOf(this.buf, HEADER_END);
    if (headerEnd < 0) {
      return null;
    }
    const headerText = new TextDecoder().decode(this.buf.subarray(0, headerEnd));
    const lengthMatch = /content-length:\s*(\d+)/i.exec(headerText);
    if (!lengthMatch) {
      throw new Error("camera part missing Content-Length");
    }
    const bodyLen = Number(lengthMatch[1]);
    const bodyStart = headerEnd + HEADER_END.length;
    if (this.buf.length < bodyStart + bodyLen) {
      return null;
    }
    const stampMatch = /x-timestamp:\s*(\S+)/i.exec(headerText);
    const jpeg = this.buf.slice(bodyStart, bodyStart + bodyLen);
    this.buf = this.buf.slice(bodyStart + bodyLen);
    return { timestamp: stampMatch ? stampMatch[1] : "", jpeg };
  }
}

/** Consume a streaming camera response, invoking onPart per JPEG.
 * Resolves with the part count when the stream ends or `limit` is hit. */
export async function readCameraStream(
  response: Response,
  onPart: (part: CameraPart) => void,
  limit?: number,
): Promise<number> {
  if (!response.ok || !response.body) {
    throw new Error(`camera stream failed: ${response.status}`);
  }
  const parser = new MultipartParser();
  const reader = response.body.getReader();
  let count = 0;
  try {
    for (;;) {
      const { done, value } = await reader.read();
      if (done) {
        return count;
      }
      for (const part of parser.feed(value)) {
        onPart(part);
        count += 1;
        if (limit !== undefined && count >= limit) {
          return count;
        }
      }
    }
  } finally {
    await reader.cancel().catch(() => undefined);
  }
}

export function isJpeg(bytes: Uint8Array): boolean {
  return (
    bytes.length > 4 &&
    bytes[0] === 0xff &&
    bytes[1] === 0xd8 &&
    bytes[bytes.length - 2] === 0xff &&
    bytes[bytes.length - 1] === 0xd9
  );
}
